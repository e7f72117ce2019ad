"""Procedural action catalog: sinusoidal Lie-parameter trajectories.

Each action is a stance plus a handful of sinusoids on chosen bones (and
optionally the root). Every frame is produced by forward kinematics, so bone
lengths hold exactly. Jitter draws per-sample amplitude, frequency, phase and
offset perturbations from bounded uniform distributions, which lets the
norm bound on every axis-angle vector be checked ahead of time.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..kinematics import JointPose, Skeleton, fk_arrays, inverse_kinematics
from .formats import DatasetManifest, FormatError, MotionRecord

ROOT = "root"


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class Wave:
    target: str  # bone, named by the joint it ends at, or "root"
    axis: int
    amplitude: float  # radians (meters for the root)
    frequency: float  # Hz
    phase: float = 0.0


@dataclass(frozen=True)
class Jitter:
    amplitude: float = 0.2   # relative, per wave
    frequency: float = 0.15  # relative, shared by all waves of a sample
    phase: float = np.pi     # radians, shared shift
    offset: float = 0.08     # radians, per bone component
    root: float = 0.02       # meters, per root component


@dataclass(frozen=True)
class SyntheticActionSpec:
    name: str
    waves: tuple[Wave, ...]
    offsets: dict = field(default_factory=dict)  # target -> 3-vector
    duration: tuple[int, int] = (28, 36)  # frames, inclusive
    fps: float = 12.0
    jitter: Jitter = Jitter()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["offsets"] = {k: list(map(float, v)) for k, v in self.offsets.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticActionSpec":
        try:
            return cls(name=d["name"],
                       waves=tuple(Wave(**w) for w in d.get("waves", ())),
                       offsets={k: tuple(v) for k, v in d.get("offsets", {}).items()},
                       duration=tuple(d.get("duration", (28, 36))),
                       fps=float(d.get("fps", 12.0)),
                       jitter=Jitter(**d.get("jitter", {})))
        except (KeyError, TypeError) as exc:
            raise SynthesisError(f"bad action spec: {exc}") from None


def load_specs(path) -> list[SyntheticActionSpec]:
    doc = json.loads(Path(path).read_text())
    return [SyntheticActionSpec.from_dict(d) for d in doc]


# standing pose directions (y up, +x is the body's left, +z forward)
_STANCE_DIRECTIONS = {
    "spine1": (0, 1, 0), "spine2": (0, 1, 0), "chest": (0, 1, 0), "head": (0, 1, 0.05),
    "l_collar": (1, 0.1, 0), "l_elbow": (0.15, -1, 0), "l_wrist": (0.05, -1, 0.1),
    "l_hand": (0, -1, 0.05),
    "r_collar": (-1, 0.1, 0), "r_elbow": (-0.15, -1, 0), "r_wrist": (-0.05, -1, 0.1),
    "r_hand": (0, -1, 0.05),
    "l_hip": (1, -0.5, 0), "l_knee": (0, -1, 0.02), "l_ankle": (0, -1, -0.02),
    "l_toe": (0, -0.3, 1),
    "r_hip": (-1, -0.5, 0), "r_knee": (0, -1, 0.02), "r_ankle": (0, -1, -0.02),
    "r_toe": (0, -0.3, 1),
}
STANCE_ROOT = (0.0, 0.95, 0.0)


def stance_omega(skeleton: Skeleton) -> np.ndarray:
    """Axis-angle stance for a skeleton using the default joint names.

    Joints without a listed direction continue straight from their parent.
    """
    joints = np.zeros((skeleton.joint_count, 3))
    joints[skeleton.root_index] = STANCE_ROOT
    for n in skeleton.order:
        s, e = skeleton.bones[n]
        d = np.array(_STANCE_DIRECTIONS.get(skeleton.joints[e], (0, 1, 0)), dtype=float)
        joints[e] = joints[s] + skeleton.bone_lengths[n] * d / np.linalg.norm(d)
    return inverse_kinematics(JointPose(joints), skeleton).omega


def default_action_specs() -> list[SyntheticActionSpec]:
    """wave, squat, walk_in_place and reach for the default skeleton."""
    wave = SyntheticActionSpec(
        "wave",
        waves=(Wave("r_wrist", 2, 0.6, 1.0), Wave("r_hand", 2, 0.3, 1.0, 0.5),
               Wave("r_elbow", 0, 0.15, 0.5)),
        offsets={"r_elbow": (0.0, 0.0, -1.9), "r_wrist": (0.0, 0.0, -0.6)})
    squat = SyntheticActionSpec(
        "squat",
        waves=(Wave("l_knee", 1, -0.6, 0.5), Wave("r_knee", 1, -0.6, 0.5),
               Wave("l_ankle", 1, 0.9, 0.5), Wave("r_ankle", 1, 0.9, 0.5),
               Wave("spine1", 0, 0.25, 0.5),
               Wave(ROOT, 1, 0.1, 0.5, np.pi)),
        offsets={"l_knee": (0, -0.6, 0), "r_knee": (0, -0.6, 0),
                 "l_ankle": (0, 0.9, 0), "r_ankle": (0, 0.9, 0),
                 "spine1": (0.25, 0, 0), ROOT: (0.0, -0.1, 0.0)})
    walk = SyntheticActionSpec(
        "walk_in_place",
        waves=(Wave("l_knee", 1, 0.45, 0.9), Wave("r_knee", 1, 0.45, 0.9, np.pi),
               Wave("l_ankle", 1, 0.4, 0.9, -1.2), Wave("r_ankle", 1, 0.4, 0.9, np.pi - 1.2),
               Wave("l_elbow", 1, 0.35, 0.9, np.pi), Wave("r_elbow", 1, 0.35, 0.9),
               Wave(ROOT, 1, 0.02, 1.8)),
        offsets={"l_ankle": (0, 0.4, 0), "r_ankle": (0, 0.4, 0)})
    reach = SyntheticActionSpec(
        "reach",
        waves=(Wave("l_elbow", 1, 0.35, 0.6), Wave("r_elbow", 1, 0.35, 0.6),
               Wave("spine2", 1, 0.15, 0.6), Wave(ROOT, 2, 0.05, 0.6)),
        offsets={"l_elbow": (0, -1.3, 0), "r_elbow": (0, -1.3, 0),
                 "spine2": (0, -0.25, 0)})
    return [wave, squat, walk, reach]


def _targets(spec: SyntheticActionSpec, skeleton: Skeleton) -> dict[str, int]:
    out = {}
    names = {w.target for w in spec.waves} | set(spec.offsets)
    for t in names:
        if t == ROOT:
            continue
        try:
            out[t] = skeleton.bone_index(t)
        except (KeyError, ValueError):
            raise SynthesisError(f"action {spec.name!r}: no bone ends at joint {t!r}") from None
    return out


def validate_spec(spec: SyntheticActionSpec, skeleton: Skeleton) -> None:
    """Raise unless every sampled axis-angle vector is guaranteed norm <= pi."""
    lo, hi = spec.duration
    if not 1 <= lo <= hi:
        raise SynthesisError(f"action {spec.name!r}: bad duration range {spec.duration}")
    if spec.fps <= 0:
        raise SynthesisError(f"action {spec.name!r}: fps must be positive")
    j = spec.jitter
    if min(j.amplitude, j.frequency, j.phase, j.offset, j.root) < 0 or j.frequency >= 1:
        raise SynthesisError(f"action {spec.name!r}: jitter magnitudes must be non-negative")
    for w in spec.waves:
        if w.frequency <= 0:
            raise SynthesisError(f"action {spec.name!r}: wave on {w.target!r} has frequency <= 0")
        if w.axis not in (0, 1, 2):
            raise SynthesisError(f"action {spec.name!r}: wave axis must be 0, 1 or 2")
    index = _targets(spec, skeleton)
    base = stance_omega(skeleton)
    for t, v in spec.offsets.items():
        if t != ROOT:
            base[index[t]] += np.asarray(v, dtype=float)
    bound = np.linalg.norm(base, axis=-1) + np.sqrt(3.0) * j.offset
    for w in spec.waves:
        if w.target != ROOT:
            bound[index[w.target]] += abs(w.amplitude) * (1.0 + j.amplitude)
    bad = np.nonzero(bound > np.pi)[0]
    if bad.size:
        names = [skeleton.joints[skeleton.bones[n][1]] for n in bad]
        raise SynthesisError(f"action {spec.name!r}: rotation norm may exceed pi on {names}")


def sample_motion(spec: SyntheticActionSpec, skeleton: Skeleton, rng: np.random.Generator):
    """Draw one jittered motion; returns (joints (T, J, 3), omega (T, N, 3), root (T, 3))."""
    index = _targets(spec, skeleton)
    j = spec.jitter
    T = int(rng.integers(spec.duration[0], spec.duration[1] + 1))
    t = np.arange(T) / spec.fps

    omega = np.broadcast_to(stance_omega(skeleton), (T, skeleton.bone_count, 3)).copy()
    root = np.broadcast_to(np.asarray(STANCE_ROOT, dtype=float), (T, 3)).copy()
    for target, v in sorted(spec.offsets.items()):
        v = np.asarray(v, dtype=float)
        if target == ROOT:
            root += v
        else:
            omega[:, index[target]] += v
    omega += rng.uniform(-j.offset, j.offset, size=(1, skeleton.bone_count, 3))
    root += rng.uniform(-j.root, j.root, size=(1, 3))

    freq_scale = 1.0 + rng.uniform(-j.frequency, j.frequency)
    shift = rng.uniform(-j.phase, j.phase)
    for w in spec.waves:
        amp = w.amplitude * (1.0 + rng.uniform(-j.amplitude, j.amplitude))
        signal = amp * np.sin(2.0 * np.pi * w.frequency * freq_scale * t + w.phase + shift)
        if w.target == ROOT:
            root[:, w.axis] += signal
        else:
            omega[:, index[w.target], w.axis] += signal
    joints, _, _ = fk_arrays(omega, root, skeleton)
    return joints, omega, root


def synthesize_dataset(specs, n_per_action: int, skeleton: Skeleton, rng: np.random.Generator,
                       test_fraction: float = 0.2) -> DatasetManifest:
    """Sample ``n_per_action`` motions per spec and split each class 80/20."""
    specs = list(specs)
    if len(specs) < 2:
        raise SynthesisError("need at least two action specs")
    if n_per_action < 1:
        raise SynthesisError("n_per_action must be at least 1")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise SynthesisError("action names must be unique")
    for spec in specs:
        validate_spec(spec, skeleton)

    records, splits = [], []
    for action_id, spec in enumerate(specs):
        n_test = int(round(test_fraction * n_per_action))
        test_ids = set(rng.permutation(n_per_action)[:n_test].tolist())
        for k in range(n_per_action):
            joints, _, _ = sample_motion(spec, skeleton, rng)
            records.append(MotionRecord(spec.name, action_id, spec.fps, joints, skeleton.name))
            splits.append("test" if k in test_ids else "train")
    try:
        return DatasetManifest(skeleton, names, records, splits)
    except FormatError as exc:
        raise SynthesisError(str(exc)) from None
