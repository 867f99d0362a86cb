"""Image files (8-bit PNG, binary PPM), the ESCW weight format and
key=value run configuration files.

ESCW layout, all integers little-endian::

    b"ESCW" | u16 version | u32 count
    count x ( u16 name_len | name (utf-8) | u8 dtype (0 = f32) | u8 rank
              | rank x u32 dim | prod(dims) x f32 payload )
"""
import io as _io
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from .errors import (BadMagicError, ConfigError, ImageFormatError, PayloadMismatchError, UnsupportedDepthError,
                     VersionMismatchError, WeightFileError)
from .network import ModelConfig, WeightStore, validate_store

PathLike = Union[str, Path]

MAGIC = b"ESCW"
VERSION = 1
DTYPE_F32 = 0
_PNG_SIG = b"\x89PNG\r\n\x1a\n"


# --------------------------------------------------------------------------
# images
# --------------------------------------------------------------------------

def _read_ppm(data: bytes) -> np.ndarray:
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ImageFormatError("truncated PPM header")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"malformed PPM header: {tokens}") from exc
    if maxval != 255:
        raise UnsupportedDepthError(f"unsupported depth: PPM maxval {maxval} (only 8-bit, maxval 255)")
    need = w * h * 3
    raster = data[pos:pos + need]
    if len(raster) < need:
        raise ImageFormatError(f"truncated PPM raster: {len(raster)} of {need} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)


def _read_png(data: bytes) -> np.ndarray:
    from PIL import Image

    if len(data) < 33 or data[12:16] != b"IHDR":
        raise ImageFormatError("truncated PNG header")
    depth, color = data[24], data[25]
    if depth != 8:
        raise UnsupportedDepthError(f"unsupported depth: {depth}-bit PNG (only 8-bit)")
    try:
        with Image.open(_io.BytesIO(data)) as im:
            im.load()
            if color not in (2,):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageFormatError(f"could not decode PNG: {exc}") from exc
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageFormatError(f"expected RGB image, got array of shape {arr.shape}")
    return arr


def load_image(path: PathLike) -> np.ndarray:
    """Read an 8-bit RGB PNG or P6 PPM into a (1, 3, h, w) float32 tensor in [0, 1]."""
    data = Path(path).read_bytes()
    if data.startswith(_PNG_SIG):
        arr = _read_png(data)
    elif data[:2] == b"P6":
        arr = _read_ppm(data)
    else:
        raise ImageFormatError(f"{path}: unsupported image format (need PNG or binary PPM)")
    return (arr.astype(np.float32) / np.float32(255.0)).transpose(2, 0, 1)[None].copy()


def to_uint8(t: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1], scale by 255 and round half away from zero."""
    v = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def save_image(t: np.ndarray, path: PathLike) -> None:
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ImageFormatError("can only save a single image (batch of 1)")
        t = t[0]
    if t.ndim != 3 or t.shape[0] not in (1, 3):
        raise ImageFormatError(f"expected (3, h, w) or (1, h, w), got {t.shape}")
    arr = to_uint8(t).transpose(1, 2, 0)
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        h, w = arr.shape[:2]
        path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes())
    elif suffix == ".png":
        from PIL import Image

        Image.fromarray(np.ascontiguousarray(arr), "RGB").save(path)
    else:
        raise ImageFormatError(f"unsupported output extension {suffix!r} (use .png or .ppm)")


def save_gray(values: np.ndarray, path: PathLike) -> None:
    """Min-max normalise a 2-D map into an 8-bit grayscale PNG for inspection."""
    from PIL import Image

    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    norm = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    Image.fromarray(to_uint8(norm), "L").save(Path(path))


# --------------------------------------------------------------------------
# weights
# --------------------------------------------------------------------------

def dump_weights(store: WeightStore) -> bytes:
    buf = bytearray(MAGIC)
    buf += struct.pack("<HI", VERSION, len(store))
    for name, arr in store.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise WeightFileError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr)
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<BB", DTYPE_F32, arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(buf)


def parse_weights(data: bytes) -> WeightStore:
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 10:
        raise PayloadMismatchError("file ends inside the header")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise VersionMismatchError(f"weight file version {version}, this reader supports {VERSION}")
    pos = 10
    store: WeightStore = {}

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise PayloadMismatchError(f"file truncated at byte {pos} (wanted {n} more)")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        dtype, rank = struct.unpack("<BB", take(2))
        if dtype != DTYPE_F32:
            raise WeightFileError(f"{name}: unsupported dtype code {dtype}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims, dtype=np.int64))
        payload = take(4 * n)
        if name in store:
            raise WeightFileError(f"duplicate tensor name {name!r}")
        store[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if pos != len(data):
        raise PayloadMismatchError(f"{len(data) - pos} trailing bytes after the last tensor")
    return store


def save_weights(store: WeightStore, path: PathLike) -> None:
    Path(path).write_bytes(dump_weights(store))


def load_weights(path: PathLike, cfg: Optional[ModelConfig] = None) -> WeightStore:
    """Read an ESCW file; with ``cfg`` also check names and shapes against the architecture."""
    store = parse_weights(Path(path).read_bytes())
    if cfg is not None:
        validate_store(store, cfg)
    return store


# --------------------------------------------------------------------------
# run configuration
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    variant: str = "esc"
    scale: int = 2
    window_size: int = 32
    backend: str = "tiled"
    block_size: int = 64
    seed: int = 0
    heads: int = 4
    ffn_expand: float = 1.5

    def model_config(self) -> ModelConfig:
        return ModelConfig.preset(self.variant, self.scale, ws=self.window_size, heads=self.heads,
                                  ffn_expand=self.ffn_expand, backend=self.backend, block=self.block_size)


def parse_run_config(text: str) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    conv = {"int": int, "float": float, "str": str, int: int, float: float, str: str}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}; known keys: {', '.join(types)}")
        try:
            values[key] = conv[types[key]](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
    return RunConfig(**values)


def load_run_config(spec: str) -> RunConfig:
    """``spec`` is a path to a key=value file or a bare variant name."""
    p = Path(spec)
    if p.is_file():
        return parse_run_config(p.read_text())
    name = spec.lower().replace("_", "-")
    if name in ("esc", "esc-light", "esc-lt", "esc-fp"):
        return RunConfig(variant="esc-light" if name == "esc-lt" else name)
    raise ConfigError(f"{spec!r} is neither a config file nor a variant name")
