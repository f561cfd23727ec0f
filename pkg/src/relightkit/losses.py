"""Differentiable training objectives.

The combined objective used in the second training stage is

    lambda1 * L1 + lambda2 * L_ssim + lambda3 * L_perceptual + lambda4 * L_tv

with defaults (1, 5e-3, 6e-3, 2e-8).  All losses are means over elements
so their values are resolution-independent, and all return a Var so they
can sit on the training tape; call .item() for the float.

The perceptual term measures feature-space distance under a frozen,
seeded random convolution stack by default.  Anything callable that maps
an image Var to a list of feature Vars can be substituted (e.g. features
from an externally trained backbone).
"""

import dataclasses
import functools

import numpy as np

from . import autodiff as ad
from .autodiff import Var, asvar
from .errors import ConfigError, DimensionError

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclasses.dataclass(frozen=True)
class LossWeights:
    l1: float = 1.0
    ssim: float = 5e-3
    perceptual: float = 6e-3
    tv: float = 2e-8

    def __post_init__(self):
        if min(self.l1, self.ssim, self.perceptual, self.tv) < 0:
            raise ConfigError("loss weights must be >= 0")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _pair(pred, target):
    pred, target = asvar(pred), asvar(target)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def l1_loss(pred, target):
    """Mean absolute difference."""
    pred, target = _pair(pred, target)
    return ad.mean(ad.absolute(ad.sub(pred, target)))


def l2_loss(pred, target):
    """Mean squared difference."""
    pred, target = _pair(pred, target)
    return ad.mean(ad.square(ad.sub(pred, target)))


def gaussian_kernel1d(size=SSIM_WIN, sigma=SSIM_SIGMA):
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return k / k.sum()


def ssim_loss(pred, target, win_size=None, sigma=SSIM_SIGMA, k1=SSIM_K1, k2=SSIM_K2):
    """1 - mean structural similarity (Gaussian-windowed, unit data range).

    `win_size=None` shrinks the default 11-tap window to fit small
    images; an explicit window larger than the image is an error.
    """
    pred, target = _pair(pred, target)
    h, w = pred.shape[-3], pred.shape[-2]
    if min(h, w) < 2:
        raise DimensionError(f"image {h}x{w} too small for SSIM")
    if win_size is None:
        win_size = min(SSIM_WIN, h, w)
    elif win_size > min(h, w):
        raise DimensionError(f"image {h}x{w} smaller than SSIM window {win_size}")
    k = gaussian_kernel1d(win_size, sigma)
    c1 = k1 * k1  # (k1 * range)^2 with range = 1
    c2 = k2 * k2

    def blur(v):
        return ad.blur_hw_valid(v, k)

    mu1, mu2 = blur(pred), blur(target)
    mu1_sq, mu2_sq, mu12 = ad.square(mu1), ad.square(mu2), ad.mul(mu1, mu2)
    var1 = ad.sub(blur(ad.square(pred)), mu1_sq)
    var2 = ad.sub(blur(ad.square(target)), mu2_sq)
    cov = ad.sub(blur(ad.mul(pred, target)), mu12)
    num = ad.mul(ad.add(ad.mul(mu12, 2.0), c1), ad.add(ad.mul(cov, 2.0), c2))
    den = ad.mul(ad.add(ad.add(mu1_sq, mu2_sq), c1), ad.add(ad.add(var1, var2), c2))
    return ad.sub(1.0, ad.mean(ad.div(num, den)))


class FeatureExtractor:
    """Frozen stack of seeded random stride-2 convolutions.

    Three stages (channels 16/32/64 by default) with a leaky rectifier;
    calling it returns the feature Var of every stage.
    """

    def __init__(self, seed=0, channels=(16, 32, 64)):
        rng = np.random.default_rng(np.random.SeedSequence([0x5EED, seed]))
        self.channels = tuple(channels)
        self._weights = []
        c_in = 3
        for c_out in self.channels:
            limit = np.sqrt(1.0 / (9 * c_in))
            w = rng.uniform(-limit, limit, size=(3, 3, c_in, c_out))
            self._weights.append((w, np.zeros(c_out)))
            c_in = c_out
        self._cast = {}

    def _stage_vars(self, dtype):
        key = np.dtype(dtype).str
        if key not in self._cast:
            self._cast[key] = [
                (Var(w.astype(dtype)), Var(b.astype(dtype))) for w, b in self._weights
            ]
        return self._cast[key]

    def __call__(self, x):
        x = asvar(x)
        if x.data.ndim == 3:
            x = ad.reshape(x, (1, *x.data.shape))
        feats = []
        for w, b in self._stage_vars(x.dtype):
            x = ad.leaky_relu(ad.conv2d(x, w, b, stride=2, pad=1), 0.2)
            feats.append(x)
        return feats


@functools.lru_cache(maxsize=1)
def default_extractor():
    return FeatureExtractor(seed=0)


def perceptual_loss(pred, target, features=None):
    """Mean squared distance between extractor feature maps (layer average)."""
    pred, target = _pair(pred, target)
    features = features or default_extractor()
    fp = features(pred)
    ft = features(target)
    if len(fp) != len(ft):
        raise ConfigError("extractor returned mismatched feature lists")
    acc = None
    for a, b in zip(fp, ft):
        if a.shape != b.shape:
            raise ConfigError(f"extractor feature shapes differ: {a.shape} vs {b.shape}")
        term = ad.mean(ad.square(ad.sub(a, b)))
        acc = term if acc is None else ad.add(acc, term)
    return ad.mul(acc, 1.0 / len(fp))


def tv_loss(pred):
    """Squared anisotropic total variation of the prediction.

    Mean over all horizontal and vertical forward-difference terms; a
    smoothness regularizer, so it takes only the prediction.
    """
    pred = asvar(pred)
    if pred.data.ndim < 3:
        raise DimensionError(f"expected (..., H, W, C), got {pred.shape}")
    h, w = pred.shape[-3], pred.shape[-2]
    if h < 2 and w < 2:
        raise DimensionError("total variation needs at least one spatial extent >= 2")
    terms = []
    count = 0
    if h >= 2:
        d = ad.forward_diff(pred, axis=-3)
        terms.append(ad.total(ad.square(d)))
        count += d.data.size
    if w >= 2:
        d = ad.forward_diff(pred, axis=-2)
        terms.append(ad.total(ad.square(d)))
        count += d.data.size
    acc = terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])
    return ad.mul(acc, 1.0 / count)


def combined_loss(pred, target, weights=None, features=None):
    """Weighted sum of L1, SSIM, perceptual and TV terms."""
    w = weights or LossWeights()
    out = ad.mul(l1_loss(pred, target), w.l1)
    if w.ssim:
        out = ad.add(out, ad.mul(ssim_loss(pred, target), w.ssim))
    if w.perceptual:
        out = ad.add(out, ad.mul(perceptual_loss(pred, target, features), w.perceptual))
    if w.tv:
        out = ad.add(out, ad.mul(tv_loss(pred), w.tv))
    return out


def combined_loss_terms(pred, target, weights=None, features=None):
    """Per-term values plus the weighted total, for logging."""
    w = weights or LossWeights()
    terms = {
        "l1": l1_loss(pred, target),
        "ssim": ssim_loss(pred, target),
        "perceptual": perceptual_loss(pred, target, features),
        "tv": tv_loss(pred),
    }
    total = ad.add(
        ad.add(ad.mul(terms["l1"], w.l1), ad.mul(terms["ssim"], w.ssim)),
        ad.add(ad.mul(terms["perceptual"], w.perceptual), ad.mul(terms["tv"], w.tv)),
    )
    return total, {k: v.item() for k, v in terms.items()}
