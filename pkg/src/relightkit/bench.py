"""Inference latency and model-size benchmarking.

Timings cover the forward pass only: image IO, model loading and any
pre/post-processing outside the network are excluded.  Runs are
single-stream with no concurrent load.  On CPU no device synchronization
is needed; the perf_counter reads bracket the full computation.

A published reference point (0.0116 s at 1024x1024 on an 11 GB consumer
GPU) is carried in the report metadata for comparison.  It is hardware
specific and never asserted.

`compare_backends` times the same model under every available kernel
backend (numpy im2col+BLAS vs numba loops) so deployments can pick the
faster path for their machine.
"""

import dataclasses
import json
import os
import platform
import time

import numpy as np

from . import backend, network
from .errors import ConfigError, DimensionError

REFERENCE_LATENCY_S = 0.0116
REFERENCE_DEVICE = "11 GB consumer GPU (reported reference, informational only)"


@dataclasses.dataclass
class BenchReport:
    resolution: int
    warmup_iters: int
    timed_iters: int
    mean_s: float
    p50_s: float
    p95_s: float
    stddev_s: float
    param_count: int
    fp32_mb: float
    device_descr: str
    backend: str
    reference_latency_s: float = REFERENCE_LATENCY_S
    reference_device: str = REFERENCE_DEVICE
    notes: str = "timing excludes image IO, model loading, and pre/post-processing"

    @property
    def cv(self):
        return self.stddev_s / self.mean_s if self.mean_s else float("inf")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["cv"] = self.cv
        return d


def _device_descr():
    return (
        f"{platform.machine()} cpu x{os.cpu_count()}, "
        f"python {platform.python_version()}, numpy {np.__version__}"
    )


def time_inference(params, resolution=1024, warmup=10, iters=50, seed=0):
    """Time the full cascade on a fixed random image at `resolution`.

    Returns a BenchReport with order statistics over the timed
    iterations (warmup excluded) plus the model's parameter stats.
    """
    if resolution % 16:
        raise DimensionError(f"resolution {resolution} not divisible by 16")
    if iters < 10:
        raise ConfigError("timed_iters must be >= 10")
    if warmup < 0:
        raise ConfigError("warmup must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([0xBE7C4, seed]))
    img = rng.random((resolution, resolution, 3), dtype=np.float32)
    for _ in range(warmup):
        network.dsrn_forward(img, params)
    times = np.empty(iters)
    for i in range(iters):
        t0 = time.perf_counter()
        network.dsrn_forward(img, params)
        times[i] = time.perf_counter() - t0
    stats = network.param_stats(params)
    return BenchReport(
        resolution=resolution,
        warmup_iters=warmup,
        timed_iters=iters,
        mean_s=float(times.mean()),
        p50_s=float(np.percentile(times, 50)),
        p95_s=float(np.percentile(times, 95)),
        stddev_s=float(times.std()),
        param_count=stats["count"],
        fp32_mb=stats["fp32_mb"],
        device_descr=_device_descr(),
        backend=backend.current(),
    )


def compare_backends(params, resolution=256, warmup=2, iters=10, seed=0):
    """Benchmark every available kernel backend on the same workload."""
    reports = {}
    for name in backend.available():
        with backend.use_temporarily(name):
            reports[name] = time_inference(params, resolution, warmup, iters, seed)
    return reports


def report_to_json(report):
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)


def report_csv(method, report):
    """Row in the metrics-table layout (quality columns left empty)."""
    return (
        "method,psnr,ssim,lpips,runtime_s\n"
        f"{method},,,,{report.mean_s:.6f}\n"
    )
