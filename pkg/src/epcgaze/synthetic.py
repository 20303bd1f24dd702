"""Synthetic multi-subject gaze worlds with person-specific domain shift.

Each subject sees gaze ``g`` but its "appearance" features are generated as

    x = gain_s * Phi(g + bias_shift_s) + feature_offset_s + N(0, noise_sigma^2)

where ``Phi`` is a random two-layer tanh network frozen per seed.  The gaze
space shift reproduces the constant prediction offset seen on unseen people;
gain and offset play the role of appearance changes.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInput, UnknownSubject
from .seeding import derive_rng


@dataclass(frozen=True)
class GeneratorConfig:
    n_subjects: int = 10
    samples_per_subject: int = 1500
    input_dim: int = 16
    yaw_range: tuple[float, float] = (-0.5, 0.5)
    pitch_range: tuple[float, float] = (-0.4, 0.2)
    bias_shift_max: float = 0.15
    gain_range: tuple[float, float] = (0.8, 1.2)
    offset_scale: float = 0.5
    noise_sigma: float = 0.02
    true_hidden: int = 32
    true_slope: float = 2.0
    identical_subjects: bool = False

    def __post_init__(self):
        for name in ("yaw_range", "pitch_range", "gain_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.n_subjects < 3:
            raise InvalidInput("need at least 3 subjects for leave-one-subject-out")
        if self.noise_sigma < 0:
            raise InvalidInput("noise_sigma must be non-negative")


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: int
    bias_shift: np.ndarray
    feature_offset: np.ndarray
    gain: float
    noise_sigma: float


@dataclass(frozen=True)
class TrueMap:
    """The frozen nonlinear map from gaze to clean features."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    lin: np.ndarray

    def __call__(self, g) -> np.ndarray:
        g = np.atleast_2d(g)
        return np.tanh(g @ self.w1 + self.b1) @ self.w2 + g @ self.lin


@dataclass
class World:
    """All generated samples plus the hidden ground truth that produced them."""

    subject_ids: np.ndarray   # (n,)
    features: np.ndarray      # (n, input_dim)
    gaze: np.ndarray          # (n, 2)
    profiles: list[SubjectProfile] = field(default_factory=list)
    config: GeneratorConfig | None = None
    seed: int | None = None

    def __len__(self):
        return len(self.subject_ids)

    @property
    def subjects(self) -> list[int]:
        return sorted(int(s) for s in np.unique(self.subject_ids))


@dataclass(frozen=True)
class LabeledDomain:
    features: np.ndarray
    gaze: np.ndarray
    subject_ids: np.ndarray

    def __len__(self):
        return len(self.features)


@dataclass(frozen=True)
class UnlabeledDomain:
    """Target samples as the trainer sees them; deliberately has no gaze field."""

    features: np.ndarray
    subject_ids: np.ndarray

    def __len__(self):
        return len(self.features)


@dataclass(frozen=True)
class DomainSplit:
    source: LabeledDomain
    target: UnlabeledDomain
    target_gt: np.ndarray
    held_out: int


def make_true_map(cfg: GeneratorConfig, rng: np.random.Generator) -> TrueMap:
    w1 = rng.normal(0.0, cfg.true_slope, size=(2, cfg.true_hidden))
    b1 = rng.normal(0.0, 0.5, size=cfg.true_hidden)
    w2 = rng.normal(0.0, 1.0 / np.sqrt(cfg.true_hidden), size=(cfg.true_hidden, cfg.input_dim))
    lin = rng.normal(0.0, 1.0, size=(2, cfg.input_dim))
    return TrueMap(w1, b1, w2, lin)


def make_profiles(cfg: GeneratorConfig, rng: np.random.Generator) -> list[SubjectProfile]:
    profiles = []
    for sid in range(1, cfg.n_subjects + 1):
        if cfg.identical_subjects:
            shift, offset, gain = np.zeros(2), np.zeros(cfg.input_dim), 1.0
        else:
            shift = rng.uniform(-cfg.bias_shift_max, cfg.bias_shift_max, size=2)
            offset = rng.normal(0.0, cfg.offset_scale, size=cfg.input_dim)
            gain = float(rng.uniform(*cfg.gain_range))
        profiles.append(SubjectProfile(sid, shift, offset, gain, cfg.noise_sigma))
    return profiles


def render(true_map: TrueMap, profile: SubjectProfile, gaze, rng: np.random.Generator) -> np.ndarray:
    clean = true_map(np.asarray(gaze) + profile.bias_shift)
    noise = rng.normal(0.0, 1.0, size=clean.shape) * profile.noise_sigma
    return profile.gain * clean + profile.feature_offset + noise


def generate_world(cfg: GeneratorConfig | None = None, seed: int = 0,
                   profiles: list[SubjectProfile] | None = None) -> World:
    """Generate every subject's samples.  A pure function of ``(cfg, seed)``.

    ``profiles`` overrides the randomly drawn subject profiles (the gaze
    draws and the true map still come from ``seed``).
    """
    cfg = cfg or GeneratorConfig()
    true_map = make_true_map(cfg, derive_rng(seed, "data", "true-map"))
    if profiles is None:
        profiles = make_profiles(cfg, derive_rng(seed, "data", "profiles"))
    ids, feats, gazes = [], [], []
    for prof in profiles:
        rng = derive_rng(seed, "data", "subject", prof.subject_id)
        n = cfg.samples_per_subject
        g = np.column_stack([rng.uniform(*cfg.yaw_range, size=n),
                             rng.uniform(*cfg.pitch_range, size=n)])
        ids.append(np.full(n, prof.subject_id))
        feats.append(render(true_map, prof, g, rng))
        gazes.append(g)
    return World(np.concatenate(ids), np.concatenate(feats), np.concatenate(gazes),
                 list(profiles), cfg, seed)


def leave_one_subject_out(world: World, held_out_id: int) -> DomainSplit:
    if held_out_id not in world.subjects:
        raise UnknownSubject(held_out_id)
    tgt = world.subject_ids == held_out_id
    src = ~tgt
    return DomainSplit(
        source=LabeledDomain(world.features[src], world.gaze[src], world.subject_ids[src]),
        target=UnlabeledDomain(world.features[tgt], world.subject_ids[tgt]),
        target_gt=world.gaze[tgt].copy(),
        held_out=held_out_id,
    )


def draw_indices(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` distinct indices from ``range(n)``, uniformly.

    When ``size > n`` the draw wraps: full reshuffled passes are concatenated,
    so no index repeats until every index has been used.
    """
    if n <= 0:
        raise InvalidInput("cannot sample from an empty domain")
    if size <= n:
        return rng.choice(n, size=size, replace=False)
    reps = -(-size // n)
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:size]


def sample_batches(split: DomainSplit, b_s: int, b_t: int, rng: np.random.Generator):
    """Draw one independent source and target batch.

    Returns ``(LabeledDomain, UnlabeledDomain)`` views of the chosen rows.
    """
    si = draw_indices(len(split.source), b_s, rng)
    ti = draw_indices(len(split.target), b_t, rng)
    src, tgt = split.source, split.target
    return (LabeledDomain(src.features[si], src.gaze[si], src.subject_ids[si]),
            UnlabeledDomain(tgt.features[ti], tgt.subject_ids[ti]))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset(world: World, path, metadata_path=None) -> tuple[Path, Path]:
    """Write samples as CSV plus a JSON sidecar with generator config and seed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = world.features.shape[1]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "yaw", "pitch", *[f"f{i}" for i in range(d)]])
        for sid, g, x in zip(world.subject_ids, world.gaze, world.features):
            writer.writerow([int(sid), _fmt(g[0]), _fmt(g[1]), *map(_fmt, x)])
    metadata_path = Path(metadata_path) if metadata_path else path.with_suffix(".meta.json")
    meta = {
        "generator_config": asdict(world.config) if world.config else None,
        "seed": world.seed,
        "n_samples": len(world),
        "subjects": world.subjects,
        "profiles": [
            {"subject_id": p.subject_id, "bias_shift": p.bias_shift.tolist(),
             "feature_offset": p.feature_offset.tolist(), "gain": p.gain,
             "noise_sigma": p.noise_sigma}
            for p in world.profiles
        ],
    }
    metadata_path.write_text(json.dumps(meta, indent=1))
    return path, metadata_path


def read_dataset(path, metadata_path=None) -> World:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["subject_id", "yaw", "pitch"]:
            raise InvalidInput(f"{path}: unexpected header {header[:3]}")
        rows = list(reader)
    ids = np.array([int(r[0]) for r in rows])
    data = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    world = World(ids, data[:, 2:], data[:, :2])
    metadata_path = Path(metadata_path) if metadata_path else path.with_suffix(".meta.json")
    if metadata_path.exists():
        meta = json.loads(metadata_path.read_text())
        if meta.get("generator_config"):
            world.config = GeneratorConfig(**meta["generator_config"])
        world.seed = meta.get("seed")
        world.profiles = [
            SubjectProfile(p["subject_id"], np.array(p["bias_shift"]),
                           np.array(p["feature_offset"]), p["gain"], p["noise_sigma"])
            for p in meta.get("profiles", [])
        ]
    return world
