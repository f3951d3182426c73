"""Numeric substrate: image arrays, circular convolution, kernels, metrics, IO.

Images are plain float64 numpy arrays of shape ``(H, W)`` or ``(H, W, C)``.
Every spatial operator acts on the two leading axes, so extra trailing axes
(channels, or a stack of samples) are carried along unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DimensionError",
    "ConvKernel",
    "as_image",
    "fft2",
    "ifft2",
    "kernel_symbol",
    "conv_circular",
    "conv_circular_adjoint",
    "make_kernel",
    "psnr",
    "add_gaussian_noise",
    "bernoulli_mask",
    "synthetic_image",
    "read_image",
    "write_image",
    "quantize",
]


class DimensionError(ValueError):
    """Raised when array shapes are incompatible with an operation."""


def as_image(x, name="image"):
    """Return ``x`` as a finite float64 array with 2 or 3 dimensions."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise DimensionError(f"{name} must be (H, W) or (H, W, C), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class ConvKernel:
    """Odd-sized 2D filter anchored at its center tap.

    Square kernels are the norm; rectangular ones (odd along both axes) are
    accepted so that very small images can still carry a non-trivial filter.
    """

    taps: np.ndarray

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] % 2 == 0 or taps.shape[1] % 2 == 0:
            raise ValueError(f"kernel taps must be a 2D array with odd sizes, got {taps.shape}")
        if not np.all(np.isfinite(taps)):
            raise ValueError("kernel taps must be finite")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def size(self):
        return self.taps.shape

    @property
    def total(self):
        return float(self.taps.sum())

    def normalized(self):
        total = self.total
        if total == 0.0:
            raise ValueError("cannot normalize a kernel whose taps sum to zero")
        return ConvKernel(self.taps / total)

    @classmethod
    def delta(cls, size=1):
        taps = np.zeros((size, size))
        taps[size // 2, size // 2] = 1.0
        return cls(taps)

    def to_dict(self):
        return {"taps": self.taps.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["taps"], dtype=np.float64))


def fft2(plane):
    """2D DFT over the two leading axes (unnormalized forward transform)."""
    return np.fft.fft2(np.asarray(plane), axes=(0, 1))


def ifft2(spectrum, real=True):
    """Inverse of :func:`fft2`; drops the imaginary part when ``real``."""
    out = np.fft.ifft2(spectrum, axes=(0, 1))
    return out.real if real else out


def _check_fits(kernel, shape):
    kh, kw = kernel.size
    if kh > shape[0] or kw > shape[1]:
        raise DimensionError(f"kernel {kernel.size} larger than image {tuple(shape[:2])}")


def kernel_symbol(kernel, shape):
    """Transfer function of circular convolution by ``kernel`` on an ``shape[:2]`` grid.

    The center tap is moved to index ``(0, 0)`` with wrap-around before the
    DFT, so ``ifft2(kernel_symbol(k, s) * fft2(x))`` equals the circular
    convolution anchored at the kernel center.
    """
    _check_fits(kernel, shape)
    h, w = shape[0], shape[1]
    kh, kw = kernel.size
    pad = np.zeros((h, w))
    pad[:kh, :kw] = kernel.taps
    pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(pad)


def _expand(symbol, x):
    return symbol.reshape(symbol.shape + (1,) * (x.ndim - 2))


def conv_circular(img, kernel):
    """Circular convolution of every channel of ``img`` with ``kernel``.

    Raises
    ------
    DimensionError
        If the kernel does not fit inside the image plane.
    """
    x = np.asarray(img, dtype=np.float64)
    if x.ndim < 2:
        raise DimensionError(f"expected at least 2 dimensions, got shape {x.shape}")
    symbol = kernel_symbol(kernel, x.shape)
    return ifft2(_expand(symbol, x) * fft2(x))


def conv_circular_adjoint(img, kernel):
    """Adjoint of :func:`conv_circular` (correlation with the same taps)."""
    x = np.asarray(img, dtype=np.float64)
    symbol = kernel_symbol(kernel, x.shape)
    return ifft2(_expand(np.conj(symbol), x) * fft2(x))


def make_kernel(kind, std=None, size=None):
    """Build a normalized blur kernel.

    Parameters
    ----------
    kind : {"gaussian", "uniform"}
    std : float
        Standard deviation for ``"gaussian"``.
    size : int, optional
        Odd support width. Required for ``"uniform"``; for ``"gaussian"`` it
        defaults to ``2 * ceil(3 * std) + 1``.

    Returns
    -------
    ConvKernel
        Taps truncated to the support and renormalized to sum to one.
    """
    if kind == "uniform":
        if size is None or size < 1 or size % 2 == 0:
            raise ValueError(f"uniform kernel needs an odd positive size, got {size}")
        return ConvKernel(np.full((size, size), 1.0 / size**2))
    if kind == "gaussian":
        if std is None or std <= 0:
            raise ValueError(f"gaussian kernel needs std > 0, got {std}")
        if size is None:
            size = 2 * int(np.ceil(3 * std)) + 1
        if size < 1 or size % 2 == 0:
            raise ValueError(f"gaussian kernel support must be odd, got {size}")
        r = np.arange(size) - size // 2
        g = np.exp(-0.5 * (r / std) ** 2)
        taps = np.outer(g, g)
        return ConvKernel(taps / taps.sum())
    raise ValueError(f"unknown kernel kind {kind!r}")


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))


def add_gaussian_noise(img, nu, seed=None):
    """Add white Gaussian noise of standard deviation ``nu`` (deterministic per seed)."""
    if nu < 0:
        raise ValueError(f"noise level must be >= 0, got {nu}")
    x = np.asarray(img, dtype=np.float64)
    if nu == 0:
        return x.copy()
    rng = np.random.default_rng(seed)
    return x + nu * rng.standard_normal(x.shape)


def bernoulli_mask(shape, p=0.5, seed=None):
    """Binary mask with each pixel observed independently with probability ``p``."""
    rng = np.random.default_rng(seed)
    return (rng.random(tuple(shape[:2])) < p).astype(np.float64)


def synthetic_image(size=64, channels=None, seed=0):
    """Deterministic piecewise-smooth test image in ``[0, 1]``.

    A smooth background, a few discs and rectangles, and a band of fine
    stripes, so that both edges and texture are present.
    """
    rng = np.random.default_rng(seed)
    h = w = int(size)
    yy, xx = np.mgrid[0:h, 0:w] / max(h - 1, 1)
    img = 0.35 + 0.25 * np.sin(2.1 * np.pi * xx + 0.7) * np.cos(1.3 * np.pi * yy)
    for _ in range(4):
        cy, cx = rng.uniform(0.2, 0.8, 2)
        r = rng.uniform(0.08, 0.2)
        img = np.where((yy - cy) ** 2 + (xx - cx) ** 2 < r**2, rng.uniform(0.1, 0.95), img)
    for _ in range(2):
        y0, x0 = rng.uniform(0.05, 0.6, 2)
        dy, dx = rng.uniform(0.1, 0.3, 2)
        inside = (yy > y0) & (yy < y0 + dy) & (xx > x0) & (xx < x0 + dx)
        img = np.where(inside, rng.uniform(0.1, 0.95), img)
    band = (yy > 0.82) & (yy < 0.95)
    img = np.where(band, 0.5 + 0.3 * np.sign(np.sin(2 * np.pi * 8 * xx)), img)
    img = np.clip(img, 0.0, 1.0)
    if channels:
        shifts = np.linspace(-0.1, 0.1, channels)
        img = np.clip(np.stack([img + s for s in shifts], axis=-1), 0.0, 1.0)
    return img


# --------------------------------------------------------------------------
# image IO
# --------------------------------------------------------------------------


def quantize(img, bits=8):
    """Clamp to ``[0, 1]`` and round half to even onto ``2**bits - 1`` levels."""
    maxval = 2**bits - 1
    q = np.rint(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * maxval)
    return q.astype(np.uint16 if bits > 8 else np.uint8)


def _read_pgm(path):
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"only binary PGM (P5) is supported, got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return arr.astype(np.float64) / maxval


def _write_pgm(path, q, bits):
    maxval = 2**bits - 1
    h, w = q.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    body = q.astype(">u2" if bits > 8 else "u1").tobytes()
    Path(path).write_bytes(header + body)


def read_image(path):
    """Read a PGM or PNG file into a float image in ``[0, 1]``."""
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".pnm"):
        return _read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode in ("L", "RGB"):
            arr = np.asarray(im, dtype=np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def write_image(path, img, bits=8):
    """Write ``img`` as PGM or PNG after clamping and quantization.

    Grayscale supports 8 and 16 bits; RGB PNG is 8-bit only.
    """
    if bits not in (8, 16):
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    path = Path(path)
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    q = quantize(x, bits)
    if path.suffix.lower() in (".pgm", ".pnm"):
        if q.ndim != 2:
            raise DimensionError("PGM output is grayscale only")
        _write_pgm(path, q, bits)
        return
    from PIL import Image

    if q.ndim == 2 or (q.shape[2] == 3 and bits == 8):
        im = Image.fromarray(q)
    else:
        raise DimensionError(f"cannot write array of shape {q.shape} at {bits} bits as PNG")
    im.save(path, format="PNG")
