"""Forward-pass engine and analysis tools for the ESC super-resolution network."""
from ._accel import numba_enabled, set_numba, use_numba
from .attention import (AttentionWorkspace, WindowSet, attention_naive, attention_tiled, self_attention_layer,
                        window_merge, window_partition)
from .convattn import (ConvAttnParams, SharedLargeKernel, conv_attn, conv_attn_decomposed, conv_attn_forward,
                       estimate_dynamic_kernel, merge_dk_into_lk)
from .network import (ModelConfig, build_random_weights, conv_ffn, count_flops, count_params, esc_block,
                      esc_forward)
from .tensor_ops import ConvKernel, conv2d

__version__ = "0.1.0"
