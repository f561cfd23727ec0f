"""Independent brute-force reference implementations used by the tests.

These deliberately share no code with the package: plain loops and
direct formula evaluation only.
"""

import math

import numpy as np


def conv_reference(x, w, stride, pad):
    """Seven-loop NHWC correlation."""
    n, h, wd, ci = x.shape
    kh, kw, _, co = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, ho, wo, co), dtype=x.dtype)
    for b in range(n):
        for y in range(ho):
            for xx in range(wo):
                for c in range(co):
                    s = 0.0
                    for i in range(kh):
                        for j in range(kw):
                            for c1 in range(ci):
                                s += xp[b, y * stride + i, xx * stride + j, c1] * w[i, j, c1, c]
                    out[b, y, xx, c] = s
    return out


def gaussian_window(size, sigma):
    off = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(off**2) / (2 * sigma**2))
    k = k / k.sum()
    return np.outer(k, k)


def ssim_reference(a, b, win=11, sigma=1.5, k1=0.01, k2=0.03):
    """Per-window loop SSIM on an (H, W, C) pair, unit data range."""
    w2 = gaussian_window(win, sigma)
    c1, c2 = k1 * k1, k2 * k2
    h, wd, ch = a.shape
    vals = []
    for c in range(ch):
        for y in range(h - win + 1):
            for x in range(wd - win + 1):
                pa = a[y : y + win, x : x + win, c]
                pb = b[y : y + win, x : x + win, c]
                mu1 = (pa * w2).sum()
                mu2 = (pb * w2).sum()
                v1 = (pa * pa * w2).sum() - mu1 * mu1
                v2 = (pb * pb * w2).sum() - mu2 * mu2
                cov = (pa * pb * w2).sum() - mu1 * mu2
                num = (2 * mu1 * mu2 + c1) * (2 * cov + c2)
                den = (mu1 * mu1 + mu2 * mu2 + c1) * (v1 + v2 + c2)
                vals.append(num / den)
    return float(np.mean(vals))


def psnr_reference(a, b, cap=100.0):
    """Direct formula with exact accumulation."""
    diff = (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).reshape(-1)
    mse = math.fsum(d * d for d in diff) / diff.size
    if mse == 0:
        return cap
    return min(10.0 * math.log10(1.0 / mse), cap)


def extractor_features_reference(extractor, img):
    """Re-run a FeatureExtractor's stages with loop convolution."""
    x = img[None].astype(np.float64)
    feats = []
    for w, b in extractor._weights:
        y = conv_reference(x, w, stride=2, pad=1) + b
        x = np.where(y > 0, y, 0.2 * y)
        feats.append(x)
    return [f[0] for f in feats]
