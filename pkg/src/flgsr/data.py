"""Image I/O, observation masks and synthetic low-rank instances.

Every random quantity is a pure function of its parameters and a seed; a
fresh generator is built per call.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, PGMFormatError
from .linops import SamplingProblem

SIGMA_INFLATION = 1.05
_WS = b" \t\n\r\x0b\x0c"


@dataclass
class GrayImage:
    """Grayscale image with pixels in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2:
            raise DomainError(f"expected a 2-D pixel array, got shape {px.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise DomainError("pixels must lie in [0, 1]")
        self.pixels = px

    @property
    def rows(self) -> int:
        return self.pixels.shape[0]

    @property
    def cols(self) -> int:
        return self.pixels.shape[1]


def _header_token(buf: bytes, pos: int) -> tuple[bytes, int, int]:
    # skip whitespace and '#' comments, then read one token; returns (token, start, end)
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c in _WS and c:
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos:pos + 1] not in _WS:
        pos += 1
    if start == pos:
        raise PGMFormatError("unexpected end of header", start)
    return buf[start:pos], start, pos


def parse_pgm(buf: bytes) -> GrayImage:
    """Decode a binary (P5) PGM byte string."""
    if buf[:2] != b"P5":
        raise PGMFormatError(f"bad magic {buf[:2]!r}, expected b'P5'", 0)
    pos = 2
    if pos >= len(buf) or buf[pos:pos + 1] not in _WS:
        raise PGMFormatError("missing whitespace after magic", pos)
    fields, starts = [], []
    for name in ("width", "height", "maxval"):
        tok, tok_start, pos = _header_token(buf, pos)
        if not tok.isdigit():
            raise PGMFormatError(f"{name} is not a decimal integer: {tok!r}", tok_start)
        fields.append(int(tok))
        starts.append(tok_start)
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PGMFormatError(f"image dimensions must be positive, got {width}x{height}",
                             starts[0] if width < 1 else starts[1])
    if not 1 <= maxval <= 255:
        raise PGMFormatError(f"only 8-bit PGM is supported, maxval={maxval}", starts[2])
    if pos >= len(buf) or buf[pos:pos + 1] not in _WS:
        raise PGMFormatError("missing whitespace after maxval", pos)
    pos += 1
    need = width * height
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise PGMFormatError(f"truncated payload: expected {need} bytes, found {len(payload)}", pos + len(payload))
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(px.astype(float) / maxval)


def encode_pgm(img: GrayImage) -> bytes:
    q = np.clip(np.floor(np.asarray(img.pixels) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    header = f"P5\n{img.cols} {img.rows}\n255\n".encode("ascii")
    return header + q.tobytes()


def load_image(path) -> GrayImage:
    """Read a grayscale image.

    Binary PGM is decoded natively; other formats go through Pillow when it
    is installed.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:1] == b"P" and buf[1:2].isdigit():
        # netpbm family: only P5 is accepted, the parser reports the rest
        return parse_pgm(buf)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise PGMFormatError("not a P5 PGM and Pillow is unavailable", 0) from exc
    with Image.open(path) as im:
        px = np.asarray(im.convert("L"), dtype=float) / 255.0
    return GrayImage(px)


def save_image(img: GrayImage, path) -> None:
    """Write ``img`` as binary PGM (maxval 255)."""
    with open(path, "wb") as fh:
        fh.write(encode_pgm(img))


def load_builtin(name: str) -> GrayImage:
    """One of scikit-image's bundled grayscale test images (e.g. ``camera``)."""
    try:
        from skimage import data as skdata
    except ImportError as exc:  # pragma: no cover
        raise DomainError("builtin images need scikit-image") from exc
    loader = getattr(skdata, name, None)
    if loader is None:
        raise DomainError(f"unknown builtin image {name!r}")
    px = np.asarray(loader())
    if px.ndim != 2:
        raise DomainError(f"builtin image {name!r} is not grayscale")
    return GrayImage(px.astype(float) / 255.0)


def resolve_image(spec: str, base_dir=None) -> GrayImage:
    """Load ``builtin:<name>`` or a file path (relative to ``base_dir``)."""
    if spec.startswith("builtin:"):
        return load_builtin(spec.split(":", 1)[1])
    if base_dir is not None and not os.path.isabs(spec):
        spec = os.path.join(base_dir, spec)
    return load_image(spec)


def image_exists(spec: str, base_dir=None) -> bool:
    if spec.startswith("builtin:"):
        try:
            from skimage import data as skdata
        except ImportError:
            return False
        return callable(getattr(skdata, spec.split(":", 1)[1], None))
    if base_dir is not None and not os.path.isabs(spec):
        spec = os.path.join(base_dir, spec)
    return os.path.isfile(spec)


def crop_center(img: GrayImage, rows: int, cols: int | None = None) -> GrayImage:
    cols = rows if cols is None else cols
    if rows > img.rows or cols > img.cols:
        raise DomainError(f"cannot crop {img.rows}x{img.cols} to {rows}x{cols}")
    r0 = (img.rows - rows) // 2
    c0 = (img.cols - cols) // 2
    return GrayImage(img.pixels[r0:r0 + rows, c0:c0 + cols].copy())


def downsample(img: GrayImage, factor: int) -> GrayImage:
    """Block-average downsampling by an integer factor."""
    if factor < 1:
        raise DomainError("downsampling factor must be >= 1")
    r, c = img.rows // factor, img.cols // factor
    px = img.pixels[: r * factor, : c * factor].reshape(r, factor, c, factor).mean(axis=(1, 3))
    return GrayImage(px)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def generate_mask(m: int, n: int, sr: float, seed: int) -> np.ndarray:
    """``round(sr*m*n)`` distinct flat indices drawn uniformly, sorted row-major."""
    if not 0 < sr <= 1:
        raise DomainError(f"sampling rate must lie in (0, 1], got {sr}")
    k = round_half_up(sr * m * n)
    rng = np.random.default_rng(seed)
    return np.sort(rng.permutation(m * n)[:k])


@dataclass
class SyntheticInstance:
    M: np.ndarray
    problem: SamplingProblem


def synth_lowrank(m: int, n: int, r: int, seed: int, noise_sigma: float = 0.0,
                  sr: float = 0.7, inflation: float = SIGMA_INFLATION) -> SyntheticInstance:
    """Random rank-``r`` matrix in [0, 1] with (optionally noisy) sampled entries.

    For ``r >= 2`` the matrix is an affine min-max rescaling of ``A B^T``
    where ``A`` and ``B`` have ``r - 1`` standard normal columns; the shift
    supplies the remaining rank-one (constant) component, so the rank is
    exactly ``r``. For ``r = 1`` it is ``|a| |b|^T`` divided by its maximum.
    """
    if not 1 <= r <= min(m, n):
        raise DomainError(f"rank must satisfy 1 <= r <= min(m, n), got r={r}")
    if noise_sigma < 0:
        raise DomainError("noise_sigma must be nonnegative")
    factor_seed, mask_seed, noise_seed = np.random.SeedSequence(seed).generate_state(3, dtype=np.uint64)
    rng = np.random.default_rng(factor_seed)
    if r == 1:
        M = np.outer(np.abs(rng.standard_normal(m)), np.abs(rng.standard_normal(n)))
        M /= M.max()
    else:
        M = rng.standard_normal((m, r - 1)) @ rng.standard_normal((n, r - 1)).T
        M = (M - M.min()) / (M.max() - M.min())
    mask = generate_mask(m, n, sr, int(mask_seed))
    b = M.ravel()[mask]
    if noise_sigma > 0:
        b = b + noise_sigma * np.random.default_rng(noise_seed).standard_normal(b.size)
    sigma = noise_sigma * math.sqrt(mask.size) * inflation
    return SyntheticInstance(M, SamplingProblem(m, n, mask, b, sigma))
