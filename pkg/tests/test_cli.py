import json

import numpy as np
import pytest

from relightkit import data, imaging, losses, metrics, network, synth, training
from relightkit.cli import main
from relightkit.data import IlluminationSetting, SingleTask
from relightkit.network import ArchConfig


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("clidata")
    rc = main([
        "synth-data", "--scenes", "3", "--size", "32", "--seed", "5",
        "--out", str(root), "--directions", "N,S,E", "--temps", "4500,6500",
    ])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("clitrain")
    rc = main([
        "train", "--data", str(corpus), "--task", "single",
        "--source-dir", "N", "--source-temp", "6500",
        "--target-dir", "E", "--target-temp", "4500",
        "--steps-stage1", "4", "--steps-stage2", "2", "--batch-size", "1",
        "--seed", "1", "--base-channels", "4", "--stacks", "1", "--out", str(out),
    ])
    assert rc == 0
    return out


def test_synth_data_writes_corpus_and_header(corpus):
    assert len(list(corpus.glob("*.png"))) == 3 * 3 * 2
    assert (corpus / "manifest.json").exists()
    header = json.loads((corpus / "run_header.json").read_text())
    assert header["command"] == "synth-data" and header["seed"] == 5
    assert "config_hash" in header and "timestamp_utc" in header


def test_synth_data_example_count(tmp_path):
    rc = main(["synth-data", "--scenes", "10", "--size", "32", "--seed", "7", "--out", str(tmp_path)])
    assert rc == 0
    assert len(list(tmp_path.glob("*.png"))) == 400  # 10 scenes x 8 dirs x 5 temps


def test_synth_data_idempotent(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["synth-data", "--scenes", "1", "--size", "32", "--seed", "3",
            "--directions", "N", "--temps", "6500"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    for f in a.glob("*.png"):
        assert f.read_bytes() == (b / f.name).read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    ha = json.loads((a / "run_header.json").read_text())
    hb = json.loads((b / "run_header.json").read_text())
    ha.pop("timestamp_utc"); hb.pop("timestamp_utc")
    ha.pop("argv"); hb.pop("argv")  # argv differs only in --out
    assert ha == hb


def test_train_outputs(trained):
    assert (trained / "checkpoint.ckpt").exists()
    assert (trained / "train_log.jsonl").exists()
    assert (trained / "run_header.json").exists()
    ck = training.load_checkpoint(trained / "checkpoint.ckpt")
    assert ck.meta["task"] == "single"
    assert ck.meta["target_direction"] == "E"
    records = [json.loads(l) for l in (trained / "train_log.jsonl").read_text().splitlines()]
    assert any(r["stage"] == 2 for r in records)


def test_train_deterministic_checkpoints(corpus, tmp_path):
    outs = []
    for sub in ("x", "y"):
        out = tmp_path / sub
        rc = main([
            "train", "--data", str(corpus), "--task", "single",
            "--source-dir", "N", "--source-temp", "6500",
            "--target-dir", "E", "--target-temp", "4500",
            "--steps-stage1", "2", "--steps-stage2", "0", "--batch-size", "1",
            "--seed", "2", "--base-channels", "2", "--stacks", "1", "--out", str(out),
        ])
        assert rc == 0
        outs.append((out / "checkpoint.ckpt").read_bytes())
    assert outs[0] == outs[1]


def test_eval_matches_api(trained, corpus, tmp_path):
    out = tmp_path / "eval"
    rc = main(["eval", "--checkpoint", str(trained / "checkpoint.ckpt"),
               "--data", str(corpus), "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "metrics.json").read_text())
    ck = training.load_checkpoint(trained / "checkpoint.ckpt")
    index = data.index_dataset(corpus)
    pairs = data.make_pairs(index, SingleTask("N", 6500), IlluminationSetting("E", 4500))
    want = metrics.evaluate_dataset(training.checkpoint_model(ck), pairs,
                                    extractor=losses.default_extractor())
    assert doc["psnr_db"] == want.psnr_db
    assert doc["ssim"] == want.ssim
    assert doc["n_images"] == want.n_images
    assert (out / "metrics.csv").read_text().splitlines()[0] == "method,psnr,ssim,lpips,runtime_s"


def test_relight_single(trained, corpus, tmp_path):
    src = sorted(corpus.glob("*_N_6500.png"))[0]
    out_png = tmp_path / "relit.png"
    rc = main(["relight", "--checkpoint", str(trained / "checkpoint.ckpt"),
               "--input", str(src), "--out", str(out_png)])
    assert rc == 0
    img = imaging.load_image(out_png)
    assert img.shape == (32, 32, 3)


def test_relight_usage_errors(trained, corpus, tmp_path):
    src = sorted(corpus.glob("*_N_6500.png"))[0]
    # multi checkpoint with a single input -> usage error (exit 1)
    params = network.init_params(ArchConfig(base_channels=2, stacks=1), seed=0)
    multi_ck = training.Checkpoint(params=params, config=None, stage=1, step=0,
                                   best_val_psnr=None, meta={"task": "multi"})
    multi_path = tmp_path / "multi.ckpt"
    training.save_checkpoint(multi_ck, multi_path)
    rc = main(["relight", "--checkpoint", str(multi_path), "--input", str(src),
               "--out", str(tmp_path / "x.png")])
    assert rc == 1
    # single checkpoint with two inputs -> usage error as well
    rc = main(["relight", "--checkpoint", str(trained / "checkpoint.ckpt"),
               "--input", str(src), "--input2", str(src), "--out", str(tmp_path / "y.png")])
    assert rc == 1


def test_usage_errors_exit_1():
    assert main(["nonsense"]) == 1
    assert main(["train", "--data", "/tmp"]) == 1  # missing required flags
    assert main([]) == 1


def test_data_errors_exit_2(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(tmp_path)]) == 2
    rc = main(["synth-data", "--scenes", "1", "--size", "32", "--seed", "0",
               "--temps", "9999", "--out", str(tmp_path / "bad")])
    assert rc == 2


def test_bench_cli(tmp_path):
    out = tmp_path / "bench"
    rc = main(["bench", "--random-weights", "--resolution", "64", "--warmup", "1",
               "--iters", "10", "--base-channels", "2", "--stacks", "1", "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "bench.json").read_text())
    assert doc["resolution"] == 64 and doc["timed_iters"] == 10
    assert (out / "bench.csv").exists()


def test_bench_resolution_error(tmp_path):
    rc = main(["bench", "--random-weights", "--resolution", "100", "--iters", "10",
               "--out", str(tmp_path)])
    assert rc == 2


def test_help_exits_zero():
    assert main(["--help"]) == 0
    assert main(["train", "--help"]) == 0
