"""The multi-scale relighting network and its two-pass cascade.

One base pass works on a three-level image pyramid, coarsest level first.
With up() denoting bilinear 2x upsampling and I_i the pyramid image at
level i (1 = full resolution, l = coarsest):

    in_i  = I_i + up(out_{i+1})          (in_l = I_l)
    F_i   = encoder_i(in_i)
    G_i   = F_i + up(G_{i+1})            (G_l = F_l)
    out_i = decoder_i(G_i)

Each level has its own encoder and decoder.  The encoder is a
three-stage hierarchy (two of the stages stride-2, two residual blocks
per stage) taking the 3-channel level input to base_channels*4 feature
maps at 1/4 resolution; the decoder mirrors it with two stride-2
transposed convolutions and a final 3-channel projection.  The full
model cascades the base pass twice with separate weights, the second
pass refining the output of the first.

Activations (leaky rectifier, slope 0.2) live only inside the residual
blocks, so zeroing a block's weights turns it into the identity map.
"""

import dataclasses
import math

import numpy as np

from . import autodiff as ad
from . import imaging
from .autodiff import Var
from .errors import ConfigError, DimensionError

LEAKY_SLOPE = 0.2
_KSIZE = 3  # all convolutions
_TSIZE = 4  # stride-2 transposed convolutions (avoids checkerboard artifacts)


@dataclasses.dataclass(frozen=True)
class ArchConfig:
    pyramid_levels: int = 3
    enc_hierarchy_depth: int = 3
    res_blocks_per_stage: int = 2
    base_channels: int = 32
    channel_multipliers: tuple = (1, 2, 4)
    stacks: int = 2
    share_stack_weights: bool = False

    def __post_init__(self):
        if self.stacks < 1 or self.pyramid_levels < 1:
            raise ConfigError("stacks and pyramid_levels must be >= 1")
        if self.enc_hierarchy_depth < 1 or self.res_blocks_per_stage < 1:
            raise ConfigError("hierarchy depth and residual blocks must be >= 1")
        if len(self.channel_multipliers) != self.enc_hierarchy_depth:
            raise ConfigError("need one channel multiplier per hierarchy stage")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        object.__setattr__(self, "channel_multipliers", tuple(self.channel_multipliers))

    @property
    def stage_channels(self):
        return tuple(self.base_channels * m for m in self.channel_multipliers)

    @property
    def downsample_factor(self):
        """Spatial reduction of the encoder (stride-2 per stage after the first)."""
        return 2 ** (self.enc_hierarchy_depth - 1)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["channel_multipliers"] = list(self.channel_multipliers)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown architecture fields: {sorted(extra)}")
        d = dict(d)
        if "channel_multipliers" in d:
            d["channel_multipliers"] = tuple(d["channel_multipliers"])
        return cls(**d)


@dataclasses.dataclass
class LevelTrace:
    """Per-level intermediates of one base pass, finest level first."""

    inputs: list
    features: list
    fused: list
    outputs: list


def param_specs(arch):
    """Yield (name, shape, fan_in) for every tensor, in a fixed order."""
    chans = arch.stage_channels
    n_stacks = 1 if arch.share_stack_weights else arch.stacks
    for s in range(n_stacks):
        for lev in range(arch.pyramid_levels):
            p = f"s{s}.l{lev}"
            yield f"{p}.enc.head.w", (_KSIZE, _KSIZE, 3, chans[0]), _KSIZE * _KSIZE * 3
            yield f"{p}.enc.head.b", (chans[0],), 0
            for k, ck in enumerate(chans):
                if k > 0:
                    fan = _KSIZE * _KSIZE * chans[k - 1]
                    yield f"{p}.enc.down{k}.w", (_KSIZE, _KSIZE, chans[k - 1], ck), fan
                    yield f"{p}.enc.down{k}.b", (ck,), 0
                for r in range(arch.res_blocks_per_stage):
                    fan = _KSIZE * _KSIZE * ck
                    for c in (1, 2):
                        yield f"{p}.enc.stage{k}.rb{r}.conv{c}.w", (_KSIZE, _KSIZE, ck, ck), fan
                        yield f"{p}.enc.stage{k}.rb{r}.conv{c}.b", (ck,), 0
            for k in range(arch.enc_hierarchy_depth - 1, -1, -1):
                ck = chans[k]
                for r in range(arch.res_blocks_per_stage):
                    fan = _KSIZE * _KSIZE * ck
                    for c in (1, 2):
                        yield f"{p}.dec.stage{k}.rb{r}.conv{c}.w", (_KSIZE, _KSIZE, ck, ck), fan
                        yield f"{p}.dec.stage{k}.rb{r}.conv{c}.b", (ck,), 0
                if k > 0:
                    # transposed conv weights are (kh, kw, c_out, c_in)
                    fan = _TSIZE * _TSIZE * ck
                    yield f"{p}.dec.up{k}.w", (_TSIZE, _TSIZE, chans[k - 1], ck), fan
                    yield f"{p}.dec.up{k}.b", (chans[k - 1],), 0
            yield f"{p}.dec.tail.w", (_KSIZE, _KSIZE, chans[0], 3), _KSIZE * _KSIZE * chans[0]
            yield f"{p}.dec.tail.b", (3,), 0


class ModelParams:
    """All learnable tensors of one model instance plus its configuration."""

    def __init__(self, arch, tensors):
        self.arch = arch
        self.tensors = tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def state_dict(self):
        return {n: v.data for n, v in self.tensors.items()}

    def copy(self):
        return ModelParams(
            self.arch,
            {n: Var(v.data.copy(), requires_grad=True) for n, v in self.tensors.items()},
        )

    def astype(self, dtype):
        return ModelParams(
            self.arch,
            {n: Var(v.data.astype(dtype), requires_grad=True) for n, v in self.tensors.items()},
        )

    def load_state(self, state):
        if set(state) != set(self.tensors):
            raise ConfigError("state names do not match this architecture")
        for n, arr in state.items():
            if arr.shape != self.tensors[n].data.shape:
                raise ConfigError(f"shape mismatch for {n}")
            self.tensors[n].data = arr.copy()

    def zero_grad(self):
        for v in self.tensors.values():
            v.grad = None


def init_params(arch, seed=0, dtype=np.float32):
    """Fan-in-scaled uniform init (biases zero), reproducible per seed.

    The second conv of every residual block starts at zero, so each
    block is the identity at initialization and the effective depth
    grows only as training turns the branches on.  This keeps the hot
    initial learning rate stable on the deep stack.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    tensors = {}
    for name, shape, fan_in in param_specs(arch):
        if fan_in == 0 or name.endswith(".conv2.w"):
            data = np.zeros(shape, dtype=dtype)
        else:
            limit = math.sqrt(1.0 / fan_in)
            data = rng.uniform(-limit, limit, size=shape).astype(dtype)
        tensors[name] = Var(data, requires_grad=True)
    return ModelParams(arch, tensors)


def param_stats(params):
    """Exact parameter count and serialized fp32 size."""
    count = sum(int(v.data.size) for v in params.tensors.values())
    fp32_bytes = 4 * count
    return {"count": count, "fp32_bytes": fp32_bytes, "fp32_mb": fp32_bytes / 1e6}


# ---------------------------------------------------------------------------
# forward passes (batched Vars internally, single-image wrappers below)
# ---------------------------------------------------------------------------


def _residual(x, w1, b1, w2, b2):
    y = ad.conv2d(x, w1, b1, stride=1, pad=1)
    y = ad.leaky_relu(y, LEAKY_SLOPE)
    y = ad.conv2d(y, w2, b2, stride=1, pad=1)
    return ad.add(x, y)


def _stack_name(params, stack):
    return 0 if params.arch.share_stack_weights else stack


def _encode(x, params, stack, level):
    arch = params.arch
    p = f"s{_stack_name(params, stack)}.l{level}"
    t = params.tensors
    h = ad.conv2d(x, t[f"{p}.enc.head.w"], t[f"{p}.enc.head.b"], stride=1, pad=1)
    for k in range(arch.enc_hierarchy_depth):
        if k > 0:
            h = ad.conv2d(h, t[f"{p}.enc.down{k}.w"], t[f"{p}.enc.down{k}.b"], stride=2, pad=1)
        for r in range(arch.res_blocks_per_stage):
            q = f"{p}.enc.stage{k}.rb{r}"
            h = _residual(h, t[f"{q}.conv1.w"], t[f"{q}.conv1.b"], t[f"{q}.conv2.w"], t[f"{q}.conv2.b"])
    return h


def _decode(g, params, stack, level):
    arch = params.arch
    p = f"s{_stack_name(params, stack)}.l{level}"
    t = params.tensors
    h = g
    for k in range(arch.enc_hierarchy_depth - 1, -1, -1):
        for r in range(arch.res_blocks_per_stage):
            q = f"{p}.dec.stage{k}.rb{r}"
            h = _residual(h, t[f"{q}.conv1.w"], t[f"{q}.conv1.b"], t[f"{q}.conv2.w"], t[f"{q}.conv2.b"])
        if k > 0:
            h = ad.conv_transpose2d(h, t[f"{p}.dec.up{k}.w"], t[f"{p}.dec.up{k}.b"], stride=2, pad=1)
    return ad.conv2d(h, t[f"{p}.dec.tail.w"], t[f"{p}.dec.tail.b"], stride=1, pad=1)


def base_forward_batched(pyramid, params, stack=0):
    """Run one base pass over a list of NHWC Vars (finest first).

    Returns (out_1, LevelTrace); out_1 is the raw full-resolution output,
    not clamped.
    """
    arch = params.arch
    if len(pyramid) != arch.pyramid_levels:
        raise ConfigError(
            f"pyramid has {len(pyramid)} levels, architecture expects {arch.pyramid_levels}"
        )
    factor = arch.downsample_factor
    for lev, im in enumerate(pyramid):
        h, w = im.shape[1:3]
        if h % factor or w % factor:
            raise DimensionError(f"level {lev + 1} dims {h}x{w} not divisible by {factor}")
        if lev > 0 and (ph, pw) != (2 * h, 2 * w):
            raise DimensionError("pyramid levels must halve exactly")
        ph, pw = h, w
    ins, feats, fused, outs = {}, {}, {}, {}
    last = arch.pyramid_levels - 1
    for lev in range(last, -1, -1):
        x = pyramid[lev]
        if lev < last:
            x = ad.add(x, ad.upsample2x(outs[lev + 1]))
        f = _encode(x, params, stack, lev)
        g = f if lev == last else ad.add(f, ad.upsample2x(fused[lev + 1]))
        ins[lev], feats[lev], fused[lev] = x, f, g
        outs[lev] = _decode(g, params, stack, lev)
    trace = LevelTrace(
        inputs=[ins[i].data for i in range(arch.pyramid_levels)],
        features=[feats[i].data for i in range(arch.pyramid_levels)],
        fused=[fused[i].data for i in range(arch.pyramid_levels)],
        outputs=[outs[i].data for i in range(arch.pyramid_levels)],
    )
    return outs[0], trace


def build_pyramid_batched(x, levels):
    pyr = [x]
    for _ in range(levels - 1):
        pyr.append(ad.avgpool2x(pyr[-1]))
    return pyr


def forward_stacks(x, params):
    """Full cascade on a batched Var; returns the raw output of every stack."""
    outs = []
    cur = x
    for s in range(params.arch.stacks):
        pyr = build_pyramid_batched(cur, params.arch.pyramid_levels)
        out, _ = base_forward_batched(pyr, params, stack=s)
        outs.append(out)
        cur = out
    return outs


# ---------------------------------------------------------------------------
# single-image API
# ---------------------------------------------------------------------------


def residual_block(x, weights):
    """Apply one residual block to an (H, W, C) array.

    `weights` is (w1, b1, w2, b2); zero weights make this the identity.
    """
    w1, b1, w2, b2 = (np.asarray(w) for w in weights)
    x = np.asarray(x)
    if x.ndim != 3 or w1.shape[2] != x.shape[2] or w2.shape[3] != x.shape[2]:
        raise ConfigError(f"weight channels do not match input shape {x.shape}")
    with ad.no_grad():
        out = _residual(Var(x[None]), Var(w1), Var(b1), Var(w2), Var(b2))
    return out.data[0]


def encoder_forward(img, params, stack=0, level=0):
    """Encode one level input (H, W, 3) to its (H/4, W/4, c) feature map."""
    arr = np.asarray(img)
    factor = params.arch.downsample_factor
    if arr.ndim != 3 or arr.shape[0] % factor or arr.shape[1] % factor:
        raise DimensionError(f"encoder input dims must divide by {factor}, got {arr.shape}")
    with ad.no_grad():
        out = _encode(Var(arr[None]), params, stack, level)
    return out.data[0]


def decoder_forward(feat, params, stack=0, level=0):
    """Decode a fused feature map back to a full-resolution 3-channel output."""
    arr = np.asarray(feat)
    expect = params.arch.stage_channels[-1]
    if arr.ndim != 3 or arr.shape[2] != expect:
        raise ConfigError(f"decoder expects {expect} channels, got shape {arr.shape}")
    with ad.no_grad():
        out = _decode(Var(arr[None]), params, stack, level)
    return out.data[0]


def base_forward(pyramid, params, stack=0):
    """One base pass over a list of (H, W, 3) arrays; returns (out, trace)."""
    pyr = [Var(np.asarray(p)[None]) for p in pyramid]
    with ad.no_grad():
        out, trace = base_forward_batched(pyr, params, stack)
    trace = LevelTrace(
        inputs=[a[0] for a in trace.inputs],
        features=[a[0] for a in trace.features],
        fused=[a[0] for a in trace.fused],
        outputs=[a[0] for a in trace.outputs],
    )
    return out.data[0], trace


def dsrn_forward(img, params, clamp=True):
    """Run the full cascade on one (H, W, 3) image.

    Dims must be divisible by 16.  The output is clamped to [0, 1] by
    default (inference); pass clamp=False for raw network output.
    """
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"expected HxWx3 image, got {arr.shape}")
    divisor = imaging.NETWORK_DIVISOR
    if arr.shape[0] % divisor or arr.shape[1] % divisor:
        raise DimensionError(f"dims {arr.shape[:2]} not divisible by {divisor}")
    with ad.no_grad():
        outs = forward_stacks(Var(arr[None]), params)
    out = outs[-1].data[0]
    return imaging.clip01(out) if clamp else out
