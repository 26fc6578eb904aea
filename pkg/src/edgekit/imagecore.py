"""Image and tensor containers, raster IO and deterministic resampling.

Everything is float64 internally.  Files are 8-bit grayscale PNG or binary
PGM (P5); PGM is the canonical format for golden files because its bytes do
not depend on a compressor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import DomainError, ImageFormatError, ShapeError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
BICUBIC_A = -0.5

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_LATENT_MAGIC = b"EKLT"
_LATENT_HEADER = struct.Struct("<4sIII8s")
_LATENT_DTYPE = b"f64".ljust(8, b"\0")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """A 2-D grid of intensities in [0, 1], indexed ``data[y, x]``."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"GrayImage needs a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("GrayImage intensities must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DomainError(
                f"GrayImage intensities must lie in [0, 1], got [{arr.min()}, {arr.max()}]"
            )
        object.__setattr__(self, "data", _frozen(arr))

    @classmethod
    def clipped(cls, arr) -> "GrayImage":
        """Build an image after clamping ``arr`` into [0, 1]."""
        return cls(np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


@dataclass(frozen=True, eq=False)
class LatentTensor:
    """A finite C x H x W float tensor (latents and ControlNet features)."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"LatentTensor needs a non-empty C x H x W array, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("LatentTensor entries must be finite")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self):
        return f"LatentTensor({self.channels}x{self.height}x{self.width})"


@dataclass(frozen=True, eq=False)
class SemanticVector:
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ShapeError(f"SemanticVector needs a non-empty 1-D array, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("SemanticVector entries must be finite")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def dim(self) -> int:
        return self.data.size

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self):
        return f"SemanticVector(dim={self.dim})"


# -- raster IO -------------------------------------------------------------


def quantize(img: GrayImage) -> np.ndarray:
    """Map intensities to bytes, rounding half up."""
    return np.floor(np.asarray(img) * 255.0 + 0.5).astype(np.uint8)


def _read_pgm_header(buf: bytes, path) -> tuple[int, int, int, int]:
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise OSError(f"{path}: truncated PGM header")
        tok = buf[start:pos]
        if not tok.isdigit():
            raise ImageFormatError(f"{path}: malformed PGM header token {tok!r}")
        tokens.append(int(tok))
    if pos >= len(buf):
        raise OSError(f"{path}: truncated PGM header")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    width, height, maxval = tokens
    return width, height, maxval, pos


def _decode_pgm(buf: bytes, path) -> np.ndarray:
    width, height, maxval, offset = _read_pgm_header(buf, path)
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: empty PGM raster")
    if not 0 < maxval < 256:
        raise ImageFormatError(f"{path}: only 8-bit PGM is supported (maxval={maxval})")
    payload = buf[offset:offset + width * height]
    if len(payload) < width * height:
        raise OSError(
            f"{path}: truncated PGM raster ({len(payload)} of {width * height} bytes)"
        )
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    if raw.max(initial=0) > maxval:
        raise ImageFormatError(f"{path}: sample exceeds maxval {maxval}")
    return raw.astype(np.float64) / maxval


def _decode_png(path, grayscale_only: bool) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                raise ImageFormatError(f"{path}: only 8-bit PNG is supported (mode {mode})")
            if mode in ("L", "1"):
                return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            if grayscale_only:
                raise ImageFormatError(f"{path}: expected a grayscale raster, got mode {mode}")
            if mode == "LA":
                return np.asarray(im.getchannel("L"), dtype=np.float64) / 255.0
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (SyntaxError, ValueError, EOFError) as exc:
        if isinstance(exc, ImageFormatError):
            raise
        raise OSError(f"{path}: cannot decode PNG: {exc}") from exc
    return rgb @ np.asarray(LUMA_WEIGHTS)


def _load(path, grayscale_only: bool) -> GrayImage:
    path = Path(path)
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] == _PNG_MAGIC:
        arr = _decode_png(path, grayscale_only)
    elif buf[:2] == b"P5":
        arr = _decode_pgm(buf, path)
    elif buf[:2] in (b"P6", b"P3", b"P2"):
        raise ImageFormatError(f"{path}: only binary grayscale PGM (P5) is supported")
    elif len(buf) < 8:
        raise OSError(f"{path}: file too short to be an image")
    else:
        raise ImageFormatError(f"{path}: unsupported image format")
    return GrayImage(np.clip(arr, 0.0, 1.0))


def load_image(path) -> GrayImage:
    """Read a PNG or P5 PGM file; color PNGs are reduced to BT.601 luma."""
    return _load(path, grayscale_only=False)


def load_grayscale(path) -> GrayImage:
    """Like :func:`load_image` but rejects anything that is not single-channel."""
    return _load(path, grayscale_only=True)


def save_image(img: GrayImage, path) -> None:
    """Write ``img`` as 8-bit PNG (``.png`` suffix) or binary PGM (anything else)."""
    path = Path(path)
    data = quantize(img)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(data, mode="L").save(path, format="PNG")
        return
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


# -- resampling ------------------------------------------------------------


def cubic_kernel(x: np.ndarray, a: float = BICUBIC_A) -> np.ndarray:
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel centres; taps outside the grid clamp to the border sample
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(int)
    frac = src - base
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for tap in (-1, 0, 1, 2):
        w = cubic_kernel(frac - tap)
        np.add.at(mat, (rows, np.clip(base + tap, 0, n_in - 1)), w)
    return mat / mat.sum(axis=1, keepdims=True)


def resize_bicubic(img: GrayImage, w: int, h: int) -> GrayImage:
    """Catmull-Rom bicubic resize to ``w`` x ``h`` with edge clamping."""
    if w < 1 or h < 1:
        raise DomainError(f"target size must be at least 1x1, got {w}x{h}")
    if (w, h) == (img.width, img.height):
        return img
    rows = _resample_matrix(img.height, h)
    cols = _resample_matrix(img.width, w)
    return GrayImage.clipped(rows @ np.asarray(img) @ cols.T)


# -- convolution with replicate borders ------------------------------------


def correlate(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2-D correlation with an odd kernel and replicate border padding.

    Zero-sum kernels are applied to differences from the centre pixel, so
    constant regions give exactly zero.
    """
    arr = np.asarray(arr, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    ky, kx = kernel.shape
    h, w = arr.shape
    padded = np.pad(arr, ((ky // 2, ky // 2), (kx // 2, kx // 2)), mode="edge")
    zero_sum = abs(kernel.sum()) <= 1e-12 * np.abs(kernel).sum()
    out = np.zeros_like(arr)
    for i in range(ky):
        for j in range(kx):
            weight = kernel[i, j]
            if weight == 0.0:
                continue
            window = padded[i:i + h, j:j + w]
            out += weight * (window - arr) if zero_sum else weight * window
    return out


def correlate_adjoint(grad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`correlate` applied to ``grad``.

    Scatters ``grad`` back through the kernel and folds the replicated
    border contributions onto the edge pixels they were copied from.  For
    zero-sum kernels the centre-difference form of :func:`correlate` adds a
    ``-sum(kernel) * grad`` term.
    """
    grad = np.asarray(grad, dtype=np.float64)
    ky, kx = kernel.shape
    py, px = ky // 2, kx // 2
    h, w = grad.shape
    padded = signal.convolve2d(grad, kernel, mode="full")
    ri = np.clip(np.arange(-py, h + py), 0, h - 1)
    ci = np.clip(np.arange(-px, w + px), 0, w - 1)
    folded_rows = np.zeros((h, padded.shape[1]))
    np.add.at(folded_rows, ri, padded)
    out = np.zeros((h, w))
    np.add.at(out.T, ci, folded_rows.T)
    if abs(kernel.sum()) <= 1e-12 * np.abs(kernel).sum():
        out -= kernel.sum() * grad
    return out


def gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


# -- latent containers -----------------------------------------------------


def write_latent(t: LatentTensor, path) -> None:
    """Write ``t`` as ``EKLT`` header (C, H, W, dtype tag) + little-endian f64 payload."""
    c, h, w = t.shape
    with open(path, "wb") as fh:
        fh.write(_LATENT_HEADER.pack(_LATENT_MAGIC, c, h, w, _LATENT_DTYPE))
        fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_latent(path) -> LatentTensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _LATENT_HEADER.size:
        raise OSError(f"{path}: truncated latent header")
    magic, c, h, w, dtype = _LATENT_HEADER.unpack_from(buf)
    if magic != _LATENT_MAGIC:
        raise ImageFormatError(f"{path}: not a latent container (magic {magic!r})")
    if dtype != _LATENT_DTYPE:
        tag = dtype.rstrip(b"\0")
        raise ImageFormatError(f"{path}: unsupported latent dtype {tag!r}")
    n = c * h * w
    payload = buf[_LATENT_HEADER.size:]
    if len(payload) != 8 * n:
        raise OSError(f"{path}: latent payload holds {len(payload)} bytes, expected {8 * n}")
    return LatentTensor(np.frombuffer(payload, dtype="<f8").reshape(c, h, w))


def require_same_shape(a, b, what: str = "inputs") -> None:
    sa, sb = np.shape(a), np.shape(b)
    if sa != sb:
        raise ShapeError(f"{what} differ in shape: {sa} vs {sb}")
