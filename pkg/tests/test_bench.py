import json

import pytest

from relightkit import backend, bench, network
from relightkit.errors import ConfigError, DimensionError
from relightkit.network import ArchConfig

ARCH = ArchConfig(base_channels=2, stacks=1)


@pytest.fixture(scope="module")
def report():
    params = network.init_params(ARCH, seed=0)
    return bench.time_inference(params, resolution=64, warmup=1, iters=10)


def test_report_bookkeeping(report):
    assert report.resolution == 64
    assert report.warmup_iters == 1
    assert report.timed_iters == 10
    assert report.p50_s <= report.p95_s
    assert report.mean_s > 0
    stats = network.param_stats(network.init_params(ARCH, seed=0))
    assert report.param_count == stats["count"]
    assert report.fp32_mb == stats["fp32_mb"]
    assert report.backend in backend.BACKENDS
    assert report.reference_latency_s == 0.0116


def test_report_serialization(report):
    doc = json.loads(bench.report_to_json(report))
    assert doc["resolution"] == 64
    assert "cv" in doc
    csv_text = bench.report_csv("toolkit", report)
    assert csv_text.splitlines()[0] == "method,psnr,ssim,lpips,runtime_s"


def test_time_inference_validation():
    params = network.init_params(ARCH, seed=0)
    with pytest.raises(DimensionError):
        bench.time_inference(params, resolution=100, iters=10)
    with pytest.raises(ConfigError):
        bench.time_inference(params, resolution=64, iters=5)
    with pytest.raises(ConfigError):
        bench.time_inference(params, resolution=64, iters=10, warmup=-1)


@pytest.mark.skipif(not backend.HAVE_NUMBA, reason="numba not installed")
def test_compare_backends_covers_both():
    params = network.init_params(ARCH, seed=0)
    reports = bench.compare_backends(params, resolution=32, warmup=1, iters=10)
    assert set(reports) == {"numpy", "numba"}
    for name, rep in reports.items():
        assert rep.backend == name
        assert rep.mean_s > 0
