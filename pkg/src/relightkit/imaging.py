"""Image representation and multi-resolution pyramid primitives.

An image is a float ndarray of shape (H, W, 3) with values in [0, 1];
all modules share this convention.  Network input dims must be divisible
by 16 (a /4 pyramid on top of /4 encoder strides).  The pyramid
downsampler is 2x2 average pooling, which conserves the image mean and
makes the up/down invariants exactly testable; the upsampler is bilinear
without corner alignment.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .errors import DimensionError, FormatError

NETWORK_DIVISOR = 16


def check_image(img, name="image"):
    """Validate the (H, W, 3) unit-range contract; returns the array."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"{name} must be HxWx3, got shape {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        raise FormatError(f"{name} must be float, got {img.dtype}")
    if not np.isfinite(img).all():
        raise FormatError(f"{name} contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise FormatError(f"{name} values outside [0, 1]")
    return img


def to_unit_range(raw):
    """Convert an 8-bit HxWx3 image to float32 in [0, 1]."""
    raw = np.asarray(raw)
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise FormatError(f"expected 3 channels, got shape {raw.shape}")
    return raw.astype(np.float32) / 255.0


def to_uint8(img):
    """Quantize a unit-range image to 8 bit (round, clip)."""
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def load_image(path):
    """Read an 8-bit PNG as a unit-range float image."""
    with Image.open(path) as im:
        raw = np.asarray(im)
    return to_unit_range(raw)


def save_image(img, path):
    """Write a unit-range image as 8-bit PNG (deterministic bytes)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def clip01(img):
    return np.clip(img, 0.0, 1.0)


def downsample2x(img):
    """Halve both spatial dims by 2x2 averaging; dims must be even."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    if h % 2 or w % 2:
        raise DimensionError(f"downsample2x needs even dims, got {h}x{w}")
    return kernels.avgpool2x(img[None])[0]


def upsample2x(img):
    """Double both spatial dims with bilinear interpolation.

    Works for images and feature maps alike; channel count is preserved
    and constant inputs stay constant.
    """
    return kernels.up2x(np.asarray(img)[None])[0]


def build_pyramid(img, levels=3):
    """Level 1 is the input; each further level halves the resolution."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    factor = 2 ** (levels - 1)
    if h % factor or w % factor:
        raise DimensionError(f"{h}x{w} not divisible by 2^{levels - 1}")
    pyr = [img]
    for _ in range(levels - 1):
        pyr.append(downsample2x(pyr[-1]))
    return pyr
