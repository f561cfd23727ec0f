"""Two-stage optimization, learning-rate schedule, and checkpointing.

Stage 1 minimizes plain L2 reconstruction; stage 2 continues from the
stage-1 result under the weighted combined objective.  The learning rate
follows a cosine from lr_init to lr_final and restarts each stage.
Optimization is adaptive-moment gradient descent (0.9/0.999, no weight
decay) with two stability guards on the fairly hot initial rate:
global-norm gradient clipping at 1.0 and a short linear warmup
(TrainConfig.warmup_steps).  Both are additions beyond the published
recipe; without them the deep unnormalized cascade can blow up during
the first hundred steps on small batches.

When both stacks are trained, each stack's full-resolution output is
scored against the same target and the stack losses are summed with
equal weight.

Checkpoints are versioned zip archives: format.json / arch.json /
train_config.json / meta.json plus one .npy entry per named weight
tensor.  They can be read with nothing but `zipfile` and `numpy`, and a
save/load round trip reproduces forward outputs bit-identically.
"""

import collections
import dataclasses
import io
import json
import math
import statistics
import zipfile
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses as losses_mod
from . import metrics, network
from .autodiff import Var
from .errors import CheckpointError, ConfigError, DataError, DimensionError, NumericsError
from .network import ArchConfig, ModelParams

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_FORMAT = "relightkit-checkpoint"
CHECKPOINT_VERSION = 1
_MAX_REWINDS = 12
# fixed zip timestamp so equal training runs produce equal bytes
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2
    input_size: int = 512
    lr_init: float = 2e-3
    lr_final: float = 5e-5
    steps_stage1: int = 2000
    steps_stage2: int = 2000
    loss_weights: losses_mod.LossWeights = dataclasses.field(default_factory=losses_mod.LossWeights)
    seed: int = 0
    val_every: int = 100
    grad_clip: float = 1.0
    warmup_steps: int = 100

    def __post_init__(self):
        if not self.lr_init > self.lr_final > 0:
            raise ConfigError("need lr_init > lr_final > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps_stage1 < 0 or self.steps_stage2 < 0 or self.val_every < 1:
            raise ConfigError("step counts must be >= 0 and val_every >= 1")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["loss_weights"] = self.loss_weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "loss_weights" in d and not isinstance(d["loss_weights"], losses_mod.LossWeights):
            d["loss_weights"] = losses_mod.LossWeights.from_dict(d["loss_weights"])
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown training fields: {sorted(extra)}")
        return cls(**d)


@dataclasses.dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig | None
    stage: int
    step: int
    best_val_psnr: float | None
    meta: dict = dataclasses.field(default_factory=dict)


def lr_at(step, total_steps, cfg):
    """Cosine interpolation from lr_init (step 0) to lr_final (step total)."""
    if total_steps <= 0:
        raise ConfigError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    frac = step / total_steps
    return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + math.cos(math.pi * frac))


class Adam:
    """Adaptive-moment estimation over a ModelParams instance."""

    def __init__(self, params, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(v.data) for n, v in params.tensors.items()}
        self.v = {n: np.zeros_like(v.data) for n, v in params.tensors.items()}

    def step(self, lr):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, var in self.params.tensors.items():
            g = var.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            var.data -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def clip_gradients(params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm."""
    with np.errstate(over="ignore"):
        total = math.sqrt(
            sum(float((v.grad * v.grad).sum()) for v in params.tensors.values() if v.grad is not None)
        )
    if max_norm and total > max_norm:
        scale = max_norm / total
        for v in params.tensors.values():
            if v.grad is not None:
                v.grad = v.grad * scale
    return total


def _stack_loss(outs, target, objective, weights, extractor):
    """Sum of per-stack losses plus per-term float values for logging."""
    total = None
    terms = {}
    for out in outs:
        if objective == "l2":
            part = losses_mod.l2_loss(out, target)
            terms["l2"] = terms.get("l2", 0.0) + part.item()
        elif objective == "combined":
            part, part_terms = losses_mod.combined_loss_terms(out, target, weights, extractor)
            for k, v in part_terms.items():
                terms[k] = terms.get(k, 0.0) + v
        else:
            raise ConfigError(f"unknown objective {objective!r}")
        total = part if total is None else ad.add(total, part)
    return total, terms


def validation_psnr(params, pairs, chunk=8):
    """Mean PSNR of clamped final-stack outputs over (input, target) pairs."""
    vals = []
    with ad.no_grad():
        for i in range(0, len(pairs), chunk):
            block = pairs[i : i + chunk]
            x = Var(np.stack([p.input_img for p in block]).astype(np.float32))
            preds = network.forward_stacks(x, params)[-1].data
            for pred, pair in zip(preds, block):
                vals.append(metrics.psnr(np.clip(pred, 0.0, 1.0), pair.target_img))
    return math.fsum(vals) / len(vals)


def train_stage(
    params,
    pairs,
    objective,
    cfg,
    stage_steps,
    stage=1,
    val_pairs=None,
    log_path=None,
    stop_at_val_psnr=None,
):
    """Optimize `params` in place for one stage; returns the best checkpoint.

    Parameters
    ----------
    params : ModelParams, mutated by the optimizer.
    pairs : training ScenePairs (batches are sampled with replacement).
    objective : "l2" or "combined".
    stage_steps : number of optimizer steps.
    val_pairs : pairs for periodic validation; training pairs when None.
    log_path : optional JSONL file receiving {step, stage, lr, loss_terms,
        val_psnr} records at every validation point.
    stop_at_val_psnr : optional target; the stage returns early once the
        best validation PSNR reaches it.

    The deep unnormalized cascade sharpens as it fits, and the hot
    schedule can tip it over mid-stage.  When the batch loss spikes (two
    orders of magnitude above the recent median) or goes non-finite, the
    stage rewinds to the best retained parameters, resets the optimizer
    moments, and permanently halves its rate scale.  A non-finite loss
    on the very first step, or exhausting the rewind budget, raises
    NumericsError with a diagnostic dump (step, lr, per-term losses).
    """
    pairs = list(pairs)
    if not pairs:
        raise DataError("train_stage needs at least one pair")
    for p in pairs:
        h, w = p.input_img.shape[:2]
        if h % 16 or w % 16:
            raise DimensionError(f"training images must have dims divisible by 16, got {h}x{w}")
    eval_pairs = list(val_pairs) if val_pairs else pairs
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, stage, 0xA11]))
    inputs = np.stack([p.input_img for p in pairs]).astype(np.float32)
    targets = np.stack([p.target_img for p in pairs]).astype(np.float32)
    extractor = losses_mod.default_extractor() if objective == "combined" else None
    opt = Adam(params)
    log_file = open(log_path, "a") if log_path else None

    best_psnr = None
    best_state = {n: a.copy() for n, a in params.state_dict().items()}
    if stage_steps > 0:
        # the starting parameters are the first best-checkpoint candidate,
        # so a stage can never end worse than it began
        best_psnr = validation_psnr(params, eval_pairs)
    recent = collections.deque(maxlen=20)
    lr_scale = 1.0
    rewinds = 0
    try:
        for step in range(stage_steps):
            lr = lr_at(step, stage_steps, cfg) * lr_scale
            if cfg.warmup_steps:
                # linear ramp over the first steps; like the gradient clip,
                # a stability guard on the hot initial rate
                lr *= min(1.0, (step + 1) / cfg.warmup_steps)
            idx = rng.integers(0, len(pairs), size=cfg.batch_size)
            x = Var(inputs[idx])
            t = Var(targets[idx])
            outs = network.forward_stacks(x, params)
            loss, terms = _stack_loss(outs, t, objective, cfg.loss_weights, extractor)
            loss_val = loss.item()
            diverged = not math.isfinite(loss_val) or (
                len(recent) and loss_val > 100.0 * statistics.median(recent)
            )
            if diverged:
                if not math.isfinite(loss_val) and not recent:
                    raise NumericsError(
                        f"non-finite loss at stage {stage} step {step}: lr={lr:.3e}, terms={terms}"
                    )
                rewinds += 1
                if rewinds > _MAX_REWINDS:
                    raise NumericsError(
                        f"training diverged {rewinds} times, last at stage {stage} step {step}: "
                        f"lr={lr:.3e}, terms={terms}"
                    )
                params.load_state(best_state)
                opt = Adam(params)
                lr_scale *= 0.5
                recent.clear()
                if log_file:
                    log_file.write(
                        json.dumps({"step": step + 1, "stage": stage, "event": "rewind",
                                    "lr": lr, "lr_scale": lr_scale, "loss": loss_val}) + "\n"
                    )
                    log_file.flush()
                continue
            recent.append(loss_val)
            params.zero_grad()
            loss.backward()
            clip_gradients(params, cfg.grad_clip)
            opt.step(lr)

            if (step + 1) % cfg.val_every == 0 or step + 1 == stage_steps:
                val = validation_psnr(params, eval_pairs)
                if best_psnr is None or val > best_psnr:
                    best_psnr = val
                    best_state = {n: a.copy() for n, a in params.state_dict().items()}
                if log_file:
                    record = {
                        "step": step + 1,
                        "stage": stage,
                        "lr": lr,
                        "loss": loss_val,
                        "loss_terms": terms,
                        "val_psnr": val,
                    }
                    log_file.write(json.dumps(record) + "\n")
                    log_file.flush()
                if stop_at_val_psnr is not None and best_psnr >= stop_at_val_psnr:
                    break
    finally:
        if log_file:
            log_file.close()

    best_params = ModelParams(
        params.arch, {n: Var(a, requires_grad=True) for n, a in best_state.items()}
    )
    return Checkpoint(
        params=best_params,
        config=cfg,
        stage=stage,
        step=stage_steps,
        best_val_psnr=best_psnr,
    )


def train_two_stage(pairs, cfg, arch=None, val_pairs=None, log_path=None):
    """Stage 1 (L2) then stage 2 (combined loss) from the stage-1 result."""
    params = network.init_params(arch or ArchConfig(), seed=cfg.seed)
    ck1 = train_stage(params, pairs, "l2", cfg, cfg.steps_stage1, stage=1, val_pairs=val_pairs, log_path=log_path)
    if cfg.steps_stage2 == 0:
        return ck1
    params2 = ck1.params.copy()
    ck2 = train_stage(
        params2, pairs, "combined", cfg, cfg.steps_stage2, stage=2, val_pairs=val_pairs, log_path=log_path
    )
    ck2.meta["stage1_best_val_psnr"] = ck1.best_val_psnr
    return ck2


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------


def _zip_write(zf, name, payload):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, payload)


def save_checkpoint(ckpt, path):
    """Write a checkpoint archive; byte-identical for identical contents."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        _zip_write(zf, "format.json", json.dumps({"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION}))
        _zip_write(zf, "arch.json", json.dumps(ckpt.params.arch.to_dict(), sort_keys=True))
        cfg = None if ckpt.config is None else ckpt.config.to_dict()
        _zip_write(zf, "train_config.json", json.dumps(cfg, sort_keys=True))
        meta = {
            "stage": ckpt.stage,
            "step": ckpt.step,
            "best_val_psnr": ckpt.best_val_psnr,
            **ckpt.meta,
        }
        _zip_write(zf, "meta.json", json.dumps(meta, sort_keys=True))
        for name in sorted(ckpt.params.tensors):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, ckpt.params.tensors[name].data, version=(1, 0))
            _zip_write(zf, f"weights/{name}.npy", buf.getvalue())


def load_checkpoint(path, expect_arch=None):
    """Read a checkpoint archive back into a Checkpoint.

    Raises CheckpointError for corrupt/truncated/unknown archives and
    ConfigError when `expect_arch` does not match the stored one.
    """
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with zf:
        try:
            fmt = json.loads(zf.read("format.json"))
            if fmt.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} archive")
            if fmt.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {fmt.get('version')}")
            arch = ArchConfig.from_dict(json.loads(zf.read("arch.json")))
            cfg_doc = json.loads(zf.read("train_config.json"))
            meta = json.loads(zf.read("meta.json"))
            weights = {}
            for info in zf.infolist():
                if info.filename.startswith("weights/") and info.filename.endswith(".npy"):
                    name = info.filename[len("weights/") : -len(".npy")]
                    weights[name] = np.lib.format.read_array(io.BytesIO(zf.read(info)))
        except CheckpointError:
            raise
        except ConfigError:
            raise
        except Exception as exc:
            raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if expect_arch is not None and arch != expect_arch:
        raise ConfigError(f"checkpoint architecture {arch} does not match expected {expect_arch}")
    expected_names = {name for name, _, _ in network.param_specs(arch)}
    if set(weights) != expected_names:
        raise CheckpointError("checkpoint weight names do not match its architecture")
    params = ModelParams(arch, {n: Var(w, requires_grad=True) for n, w in weights.items()})
    cfg = None if cfg_doc is None else TrainConfig.from_dict(cfg_doc)
    return Checkpoint(
        params=params,
        config=cfg,
        stage=int(meta.pop("stage", 0)),
        step=int(meta.pop("step", 0)),
        best_val_psnr=meta.pop("best_val_psnr", None),
        meta=meta,
    )


def checkpoint_model(ckpt):
    """Callable image -> relit image for evaluation pipelines."""

    def run(img):
        return network.dsrn_forward(img, ckpt.params, clamp=True)

    return run
