"""Evaluation metrics: PSNR, SSIM, and a pluggable perceptual distance.

The perceptual distance follows the learned-metric recipe (per-location
unit-normalized channel activations, squared differences, spatial mean,
layer sum) over whatever feature extractor is supplied; the toolkit's
seeded random extractor is the self-contained default.  Values from
externally trained backbones are not comparable with it.
"""

import csv
import dataclasses
import io
import json
import math

import numpy as np

from . import autodiff as ad
from . import losses
from .errors import ConfigError, DataError, DimensionError

PSNR_CAP_DB = 100.0


@dataclasses.dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    perceptual_distance: float | None
    n_images: int

    def to_dict(self):
        return dataclasses.asdict(self)


def psnr(pred, target, cap=PSNR_CAP_DB):
    """10*log10(1/MSE) for unit-range images, capped for identical pairs."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred.astype(np.float64) - target.astype(np.float64)) ** 2))
    if mse == 0.0:
        return cap
    return min(10.0 * math.log10(1.0 / mse), cap)


def ssim_metric(pred, target, **kwargs):
    """Mean SSIM; exactly 1 - ssim_loss."""
    with ad.no_grad():
        return 1.0 - losses.ssim_loss(pred, target, **kwargs).item()


def perceptual_distance(pred, target, extractor):
    """Normalized feature-space distance between two images."""
    if extractor is None:
        raise ConfigError("perceptual_distance requires a feature extractor")
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {target.shape}")
    with ad.no_grad():
        fp = extractor(pred)
        ft = extractor(target)
    dist = 0.0
    for a, b in zip(fp, ft):
        a, b = a.data, b.data
        na = a / np.sqrt((a * a).sum(axis=-1, keepdims=True) + 1e-12)
        nb = b / np.sqrt((b * b).sum(axis=-1, keepdims=True) + 1e-12)
        sq = ((na - nb) ** 2).sum(axis=-1)
        dist += float(sq.mean())
    return dist


def evaluate_dataset(model, pairs, extractor=None):
    """Mean metrics of `model` over ScenePairs.

    `model` maps an input image to a prediction.  The perceptual column
    is included only when an extractor is supplied.  Uses exact (fsum)
    accumulation so pair order cannot change the result.
    """
    pairs = list(pairs)
    if not pairs:
        raise DataError("evaluate_dataset needs at least one pair")
    psnrs, ssims, percs = [], [], []
    for pair in pairs:
        pred = model(pair.input_img)
        psnrs.append(psnr(pred, pair.target_img))
        ssims.append(ssim_metric(pred, pair.target_img))
        if extractor is not None:
            percs.append(perceptual_distance(pred, pair.target_img, extractor))
    n = len(pairs)
    return MetricReport(
        psnr_db=math.fsum(psnrs) / n,
        ssim=math.fsum(ssims) / n,
        perceptual_distance=(math.fsum(percs) / n) if percs else None,
        n_images=n,
    )


CSV_COLUMNS = ("method", "psnr", "ssim", "lpips", "runtime_s")


def report_to_json(report, **extra):
    d = report.to_dict()
    d.update(extra)
    return json.dumps(d, indent=2, sort_keys=True)


def report_csv(method, report, runtime_s=None):
    """One header plus one row in the comparison-table layout."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_COLUMNS)
    writer.writerow(
        [
            method,
            f"{report.psnr_db:.4f}",
            f"{report.ssim:.4f}",
            "" if report.perceptual_distance is None else f"{report.perceptual_distance:.4f}",
            "" if runtime_s is None else f"{runtime_s:.6f}",
        ]
    )
    return buf.getvalue()
