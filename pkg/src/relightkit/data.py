"""Dataset indexing, pairing, opposite-direction fusion, and splits.

A dataset is a directory of PNGs whose names encode (scene, direction,
temperature), by default "{scene}_{direction}_{temp}.png", e.g.
"scene0007_NE_4500.png".  A JSON manifest (written by the synthetic
generator, or hand-made for other packagings) can replace filename
parsing:

    {"images": [{"path": ..., "scene": ..., "direction": ..., "temp": ...}, ...]}

A training task fixes the input setting(s) and one target setting; each
complete scene contributes one pair.  The multi-illumination task fuses
two opposite-direction captures of equal temperature into one averaged
input image.
"""

import dataclasses
import json
import re
import warnings
from pathlib import Path

import numpy as np

from . import imaging
from .errors import DataError, DimensionError

DIRECTIONS = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
TEMPERATURES_K = (2500, 3500, 4500, 5500, 6500)
DEFAULT_PATTERN = "{scene}_{direction}_{temp}"

_OPPOSITE = {d: DIRECTIONS[(i + 4) % 8] for i, d in enumerate(DIRECTIONS)}


def opposite(direction):
    """180-degree rotation: N<->S, E<->W, NE<->SW, NW<->SE."""
    try:
        return _OPPOSITE[direction]
    except KeyError:
        raise DataError(f"unknown direction {direction!r}") from None


@dataclasses.dataclass(frozen=True)
class IlluminationSetting:
    direction: str
    temperature_k: int

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise DataError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.temperature_k not in TEMPERATURES_K:
            raise DataError(f"temperature must be one of {TEMPERATURES_K}, got {self.temperature_k}")


@dataclasses.dataclass(frozen=True)
class SingleTask:
    direction: str
    temperature_k: int

    @property
    def input_settings(self):
        return (IlluminationSetting(self.direction, self.temperature_k),)


@dataclasses.dataclass(frozen=True)
class MultiTask:
    direction: str
    direction2: str | None = None
    temperature_k: int = 6500

    def __post_init__(self):
        if self.direction2 is None:
            object.__setattr__(self, "direction2", opposite(self.direction))
        elif self.direction2 != opposite(self.direction):
            raise DataError(
                f"multi-illumination directions must be opposite, got {self.direction}/{self.direction2}"
            )

    @property
    def input_settings(self):
        return (
            IlluminationSetting(self.direction, self.temperature_k),
            IlluminationSetting(self.direction2, self.temperature_k),
        )


@dataclasses.dataclass
class SceneIndex:
    root: Path
    scenes: dict
    skipped: tuple = ()

    def __len__(self):
        return len(self.scenes)

    @property
    def n_scenes(self):
        return len(self.scenes)

    @property
    def total_images(self):
        return sum(len(v) for v in self.scenes.values())

    def scene_ids(self):
        return sorted(self.scenes)

    def path(self, scene, setting):
        return self.scenes[scene][setting]

    def subset(self, ids):
        ids = set(ids)
        missing = ids - set(self.scenes)
        if missing:
            raise DataError(f"scenes not in index: {sorted(missing)}")
        return SceneIndex(self.root, {s: self.scenes[s] for s in sorted(ids)}, self.skipped)


def _pattern_regex(pattern):
    fields = {"scene": r"(?P<scene>.+)", "direction": r"(?P<direction>[A-Z]{1,2})", "temp": r"(?P<temp>\d+)"}
    out = ""
    pos = 0
    for m in re.finditer(r"\{(scene|direction|temp)\}", pattern):
        out += re.escape(pattern[pos : m.start()]) + fields[m.group(1)]
        pos = m.end()
    out += re.escape(pattern[pos:])
    return re.compile(f"^{out}$")


def index_dataset(root, pattern=DEFAULT_PATTERN, manifest=None):
    """Map every image under `root` to (scene, direction, temperature).

    Unparseable files are collected in the skipped report (with a
    warning); an empty result is an error.  `manifest` bypasses filename
    parsing entirely.
    """
    root = Path(root)
    if manifest is None and not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    scenes = {}
    skipped = []

    def record(path, scene, direction, temp, label):
        try:
            setting = IlluminationSetting(direction, int(temp))
        except (DataError, ValueError) as exc:
            skipped.append((label, str(exc)))
            return
        slot = scenes.setdefault(scene, {})
        if setting in slot:
            skipped.append((label, f"duplicate capture for {scene} {direction} {temp}"))
            return
        slot[setting] = Path(path)

    if manifest is not None:
        manifest = Path(manifest)
        try:
            doc = json.loads(manifest.read_text())
            images = doc["images"]
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {manifest}: {exc}") from exc
        for entry in images:
            try:
                path = manifest.parent / entry["path"]
                record(path, str(entry["scene"]), str(entry["direction"]), entry["temp"], str(entry["path"]))
            except (KeyError, TypeError) as exc:
                skipped.append((str(entry), f"bad manifest entry: {exc}"))
    else:
        rx = _pattern_regex(pattern)
        for path in sorted(root.glob("*.png")):
            m = rx.match(path.stem)
            if not m:
                skipped.append((path.name, f"name does not match pattern {pattern!r}"))
                continue
            record(path, m.group("scene"), m.group("direction"), m.group("temp"), path.name)

    if skipped:
        warnings.warn(f"skipped {len(skipped)} file(s) while indexing {root}")
    if not scenes:
        raise DataError(f"no usable images under {root}")
    counts = {len(v) for v in scenes.values()}
    if len(counts) > 1:
        warnings.warn(
            f"scenes expose different numbers of settings ({sorted(counts)}); "
            "incomplete scenes are skipped at pairing time"
        )
    return SceneIndex(root, scenes, tuple(skipped))


def fuse_opposite(a, b, w1=0.5, w2=0.5):
    """Pixelwise weighted average of two opposite-direction captures."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    if abs(w1 + w2 - 1.0) > 1e-9:
        warnings.warn(f"fusion weights sum to {w1 + w2}, not 1")
    return w1 * a + w2 * b


@dataclasses.dataclass
class ScenePair:
    scene: str
    input_img: np.ndarray
    input_settings: tuple
    target_img: np.ndarray
    target_setting: IlluminationSetting


def make_pairs(index, task, target_setting):
    """One (input, target) pair per scene that has every required capture.

    Scenes missing a capture are skipped with a warning.  Multi tasks
    fuse the two opposite inputs with equal weights.
    """
    inputs = task.input_settings
    required = (*inputs, target_setting)
    pairs = []
    incomplete = []
    for scene in index.scene_ids():
        available = index.scenes[scene]
        if any(s not in available for s in required):
            incomplete.append(scene)
            continue
        imgs = [imaging.load_image(available[s]) for s in inputs]
        fused = imgs[0] if len(imgs) == 1 else fuse_opposite(imgs[0], imgs[1])
        pairs.append(
            ScenePair(
                scene=scene,
                input_img=fused,
                input_settings=inputs,
                target_img=imaging.load_image(available[target_setting]),
                target_setting=target_setting,
            )
        )
    if incomplete:
        warnings.warn(f"skipped {len(incomplete)} scene(s) missing required settings")
    if not pairs:
        raise DataError("no scene has all required settings")
    return pairs


def split_custom(index, n_test=60, seed=0):
    """Deterministic disjoint train/test split over scenes."""
    ids = index.scene_ids()
    if not 0 < n_test < len(ids):
        raise DataError(f"n_test={n_test} must lie strictly between 0 and {len(ids)}")
    rng = np.random.default_rng(np.random.SeedSequence([0x5B117, seed]))
    perm = rng.permutation(len(ids))
    test_ids = sorted(ids[i] for i in perm[:n_test])
    train_ids = sorted(set(ids) - set(test_ids))
    return index.subset(train_ids), index.subset(test_ids)


def save_split(path, train_index, test_index):
    doc = {"train": train_index.scene_ids(), "test": test_index.scene_ids()}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_split(path, index):
    try:
        doc = json.loads(Path(path).read_text())
        return index.subset(doc["train"]), index.subset(doc["test"])
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read split file {path}: {exc}") from exc
