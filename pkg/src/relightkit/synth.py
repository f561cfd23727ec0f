"""Synthetic scene renderer: point-source falloff plus diffuse shading.

Physics: a point source of power P deposits P / (4 pi r^2) at distance r,
tinted by the source's color temperature; a surfel with diffuse
reflectivity K_d, ambient reflectivity K_a and unit normal N under unit
light direction L reflects

    I = I_p * K_d * max(N . L, 0) + K_a * I_a

Only the diffuse term is modelled (no speculars, no cast shadows; shading
is local).  The dot product is clamped at zero: negative radiance is
unphysical even though the raw reflection formula omits the clamp.

Scenes are seeded top-down orthographic heightfields: gentle random
undulation plus smoothed axis-aligned box plateaus on a ground plane,
carrying a procedural low-frequency albedo overlaid with a stripe
pattern.  The light sits at a fixed elevation along one of the eight
compass directions, so opposite directions produce mirrored brightness
gradients and genuinely dark back-slopes (ambient only).  Rendering is
deterministic per (scene seed, setting, size).
"""

import dataclasses
import json
import math
import warnings
from pathlib import Path

import numpy as np

from . import data as datamod
from . import imaging, kernels
from .errors import DataError, DimensionError, NumericsError

# compass direction -> (east, north) unit vector
_SQ2 = math.sqrt(0.5)
DIRECTION_VECTORS = {
    "N": (0.0, 1.0),
    "NE": (_SQ2, _SQ2),
    "E": (1.0, 0.0),
    "SE": (_SQ2, -_SQ2),
    "S": (0.0, -1.0),
    "SW": (-_SQ2, -_SQ2),
    "W": (-1.0, 0.0),
    "NW": (-_SQ2, _SQ2),
}

KELVIN_MIN = 1000
KELVIN_MAX = 12000
_WHITE_POINT_K = 6500


@dataclasses.dataclass(frozen=True)
class PointSource:
    intensity: float
    position: tuple
    temperature_k: int = 6500

    def __post_init__(self):
        if self.intensity <= 0:
            raise DataError("point source intensity must be positive")
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))


@dataclasses.dataclass(frozen=True)
class Surfel:
    position: tuple
    normal: tuple
    k_d: tuple
    k_a: tuple

    def __post_init__(self):
        for name in ("k_d", "k_a"):
            vals = tuple(float(v) for v in getattr(self, name))
            if min(vals) < 0 or max(vals) > 1:
                raise DataError(f"{name} must lie in [0, 1]")
            object.__setattr__(self, name, vals)
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "normal", tuple(float(v) for v in self.normal))


@dataclasses.dataclass(frozen=True)
class SyntheticScene:
    # low ambient and a low source elevation leave slopes facing away
    # from the light genuinely dark, which is what makes fusing two
    # opposite captures informative
    seed: int
    ambient: float = 0.012
    source_power: float = 40.0
    source_distance: float = 1.6
    source_height: float = 0.85


def _blackbody_raw(temp_k):
    # piecewise published approximation of the blackbody locus, 0..255 scale
    t = temp_k / 100.0
    if t <= 66:
        r = 255.0
        g = 99.4708025861 * math.log(t) - 161.1195681661
    else:
        r = 329.698727446 * (t - 60) ** -0.1332047592
        g = 288.1221695283 * (t - 60) ** -0.0755148492
    if t >= 66:
        b = 255.0
    elif t <= 19:
        b = 0.0
    else:
        b = 138.5177312231 * math.log(t - 10) - 305.0447927307
    return tuple(min(255.0, max(0.0, v)) for v in (r, g, b))


def kelvin_to_rgb(temp_k):
    """RGB tint of a blackbody at temp_k, normalized so 6500 K is white."""
    if not KELVIN_MIN <= temp_k <= KELVIN_MAX:
        raise DataError(f"temperature {temp_k} K outside [{KELVIN_MIN}, {KELVIN_MAX}]")
    raw = _blackbody_raw(temp_k)
    white = _blackbody_raw(_WHITE_POINT_K)
    return np.clip(np.array(raw) / np.array(white), 0.0, 1.0)


def irradiance(surfel_pos, source):
    """Inverse-square falloff: |I| = P / (4 pi r^2), tinted by temperature."""
    rvec = np.asarray(source.position, dtype=np.float64) - np.asarray(surfel_pos, dtype=np.float64)
    r2 = float(rvec @ rvec)
    if r2 == 0.0:
        raise NumericsError("surfel coincides with the point source")
    return (source.intensity / (4.0 * math.pi * r2)) * kelvin_to_rgb(source.temperature_k)


def _unit(v, name):
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise NumericsError(f"{name} has zero length")
    if abs(n - 1.0) > 1e-6:
        warnings.warn(f"{name} not unit length (|v|={n:.6f}); normalizing")
        v = v / n
    return v


def shade_diffuse(surfel, i_p, light_dir, i_a):
    """Per-channel diffuse + ambient reflection at one surfel (unclipped)."""
    n = _unit(surfel.normal, "surface normal")
    light = _unit(light_dir, "light direction")
    ndl = max(float(n @ light), 0.0)
    return np.asarray(i_p) * np.asarray(surfel.k_d) * ndl + np.asarray(surfel.k_a) * np.asarray(i_a)


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _heightfield(rng, x, y):
    z = np.zeros_like(x)
    for _ in range(int(rng.integers(6, 11))):
        cx, cy = rng.uniform(0.08, 0.92, size=2)
        amp = rng.uniform(0.05, 0.15)
        width = rng.uniform(0.06, 0.16)
        z += amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * width**2))
    edge = 0.012
    for _ in range(int(rng.integers(2, 6))):
        cx, cy = rng.uniform(0.15, 0.85, size=2)
        hx, hy = rng.uniform(0.05, 0.16, size=2)
        height = rng.uniform(0.05, 0.16)
        z += height * _smoothstep((hx - np.abs(x - cx)) / edge) * _smoothstep((hy - np.abs(y - cy)) / edge)
    return z


def _albedo(rng, size):
    # cell scale of a quarter of the bump width: fine enough that albedo
    # in a shadow-side patch cannot be guessed from its surroundings
    coarse = rng.uniform(0.05, 0.95, size=(1, size // 4, size // 4, 3))
    tex = coarse
    for _ in range(2):
        tex = kernels.up2x(tex)
    theta = rng.uniform(0.0, math.pi)
    freq = rng.uniform(5.0, 12.0)
    phase = rng.uniform(0.0, 2 * math.pi)
    return tex[0], theta, freq, phase


def render_scene(scene, setting, size=128):
    """Render one scene under one illumination setting as an (S, S, 3) image.

    Top-down orthographic view, north up.  The source sits
    `source_distance` along the compass direction at `source_height`
    above the ground plane, so intensity falls off across the frame and
    slopes facing the light are brighter than slopes facing away.
    """
    if size % imaging.NETWORK_DIVISOR:
        raise DimensionError(f"render size {size} not divisible by {imaging.NETWORK_DIVISOR}")
    if setting.direction not in DIRECTION_VECTORS:
        raise DataError(f"unknown direction {setting.direction!r}")
    rng = np.random.default_rng(np.random.SeedSequence([0x5CE4E, scene.seed]))

    cols = (np.arange(size) + 0.5) / size
    rows = 1.0 - (np.arange(size) + 0.5) / size  # row 0 is the north edge
    x = np.broadcast_to(cols[None, :], (size, size)).copy()
    y = np.broadcast_to(rows[:, None], (size, size)).copy()

    z = _heightfield(rng, x, y)
    albedo, theta, freq, phase = _albedo(rng, size)
    stripes = 0.8 + 0.2 * np.sign(np.sin(2 * math.pi * freq * (x * math.cos(theta) + y * math.sin(theta)) + phase))
    k_d = albedo * stripes[:, :, None]
    k_a = k_d

    spacing = 1.0 / size
    dz_dx = np.gradient(z, spacing, axis=1)
    dz_dy = -np.gradient(z, spacing, axis=0)  # row index runs south
    normal = np.stack([-dz_dx, -dz_dy, np.ones_like(z)], axis=-1)
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)

    ex, ey = DIRECTION_VECTORS[setting.direction]
    src = np.array(
        [0.5 + scene.source_distance * ex, 0.5 + scene.source_distance * ey, scene.source_height]
    )
    pos = np.stack([x, y, z], axis=-1)
    rvec = src[None, None, :] - pos
    r2 = (rvec**2).sum(axis=-1)
    light = rvec / np.sqrt(r2)[:, :, None]
    irr = scene.source_power / (4.0 * math.pi * r2)
    ndl = np.maximum((normal * light).sum(axis=-1), 0.0)
    tint = kelvin_to_rgb(setting.temperature_k)
    img = tint[None, None, :] * (irr * ndl)[:, :, None] * k_d + k_a * scene.ambient
    return imaging.clip01(img).astype(np.float32)


def scene_for_index(corpus_seed, index):
    """Derive the per-scene generator seed used by generate_corpus."""
    ss = np.random.SeedSequence([int(corpus_seed), int(index)])
    return int(ss.generate_state(1)[0])


def generate_corpus(
    n_scenes,
    directions=datamod.DIRECTIONS,
    temperatures=datamod.TEMPERATURES_K,
    size=128,
    seed=0,
    out_dir=".",
):
    """Render n_scenes x directions x temperatures PNGs plus a manifest.

    Files follow the loader's default naming pattern; regeneration with
    the same seed is byte-identical.  Returns the SceneIndex of the
    written corpus.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for idx in range(n_scenes):
        scene_id = f"scene{idx:04d}"
        scene = SyntheticScene(seed=scene_for_index(seed, idx))
        for direction in directions:
            for temp in temperatures:
                setting = datamod.IlluminationSetting(direction, temp)
                img = render_scene(scene, setting, size)
                name = f"{scene_id}_{direction}_{temp}.png"
                imaging.save_image(img, out_dir / name)
                entries.append(
                    {"path": name, "scene": scene_id, "direction": direction, "temp": int(temp)}
                )
    manifest = {"version": 1, "pattern": datamod.DEFAULT_PATTERN, "images": entries}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return datamod.index_dataset(out_dir)
