"""Resampling, joints-to-Lie conversion, normalization and batch sampling."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..kinematics import (DegenerateInputError, JointPose, Skeleton, inverse_kinematics,
                          measure_bone_lengths)
from .formats import DatasetManifest, MotionRecord

STD_FLOOR = 1e-6


class PreprocessError(ValueError):
    pass


def resample(motion: MotionRecord, target_fps: float) -> MotionRecord:
    """Linear interpolation of joint positions onto a ``target_fps`` grid.

    The output covers the same time span; the first and last source frames
    are kept exactly, so the new length is round(duration * target_fps) + 1
    (never fewer than two frames).
    """
    if not target_fps > 0:
        raise PreprocessError("target_fps must be positive")
    if target_fps == motion.fps or motion.length == 1:
        return replace(motion, fps=float(target_fps), frames=motion.frames.copy())
    duration = (motion.length - 1) / motion.fps
    n_out = max(2, int(round(duration * target_fps)) + 1)
    # sample positions in source-frame units, pinned at both ends
    pos = np.linspace(0.0, motion.length - 1, n_out)
    lo = np.minimum(np.floor(pos).astype(int), motion.length - 2)
    w = (pos - lo)[:, None, None]
    frames = (1.0 - w) * motion.frames[lo] + w * motion.frames[lo + 1]
    frames[0] = motion.frames[0]
    frames[-1] = motion.frames[-1]
    return replace(motion, fps=float(target_fps), frames=frames)


def pose_vectors(joints, root_index: int) -> np.ndarray:
    """(..., J, 3) world joints -> (..., 3J) vectors.

    Non-root joints are taken relative to the root; the root slot keeps the
    absolute root position (the trajectory channel).
    """
    joints = np.asarray(joints, dtype=np.float64)
    rel = joints - joints[..., root_index:root_index + 1, :]
    rel[..., root_index, :] = joints[..., root_index, :]
    return rel.reshape(joints.shape[:-2] + (-1,))


def joints_from_vectors(vectors, root_index: int) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    rel = v.reshape(v.shape[:-1] + (-1, 3))
    root = rel[..., root_index:root_index + 1, :]
    out = rel + root
    out[..., root_index, :] = root[..., 0, :]
    return out


def pose_vector_matrix(joint_count: int, root_index: int) -> np.ndarray:
    """Matrix A with pose_vectors(x) == x.reshape(3J) @ A."""
    D = 3 * joint_count
    A = np.eye(D)
    for j in range(joint_count):
        if j != root_index:
            for k in range(3):
                A[3 * root_index + k, 3 * j + k] = -1.0
    return A


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean and std of pose vectors over the training split."""

    mean: np.ndarray
    std: np.ndarray
    root_index: int

    def normalize(self, vectors):
        return (np.asarray(vectors) - self.mean) / self.std

    def denormalize(self, vectors):
        return np.asarray(vectors) * self.std + self.mean

    @property
    def root_mean(self) -> np.ndarray:
        r = self.root_index
        return self.mean[3 * r:3 * r + 3]

    @property
    def root_std(self) -> np.ndarray:
        r = self.root_index
        return self.std[3 * r:3 * r + 3]

    @classmethod
    def identity(cls, joint_count: int, root_index: int = 0) -> "NormStats":
        D = 3 * joint_count
        return cls(np.zeros(D), np.ones(D), root_index)


def compute_stats(motions, root_index: int) -> NormStats:
    """Stats over every frame of ``motions`` (iterable of (T, J, 3) arrays)."""
    frames = np.concatenate([pose_vectors(m, root_index) for m in motions], axis=0)
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return NormStats(mean, std, root_index)


@dataclass
class PreparedMotion:
    index: int  # position in the manifest
    action_id: int
    split: str
    joints: np.ndarray        # (T, J, 3)
    omega: np.ndarray         # (T, N, 3)
    root: np.ndarray          # (T, 3)
    bone_lengths: np.ndarray  # (T, N), measured per frame

    @property
    def length(self) -> int:
        return self.joints.shape[0]


@dataclass
class PreparedDataset:
    skeleton: Skeleton
    actions: list[str]
    motions: list[PreparedMotion]
    stats: NormStats

    def split(self, name: str) -> list[PreparedMotion]:
        return [m for m in self.motions if m.split == name]


def preprocess(manifest: DatasetManifest, target_fps: float | None = None) -> PreparedDataset:
    """Convert every record to Lie form and fit normalization on the train split."""
    motions = []
    for i, (rec, split) in enumerate(zip(manifest.records, manifest.splits)):
        if target_fps is not None:
            rec = resample(rec, target_fps)
        try:
            lie = inverse_kinematics(JointPose(rec.frames), manifest.skeleton)
        except DegenerateInputError as exc:
            raise PreprocessError(f"record {i} ({rec.action}): {exc}") from None
        motions.append(PreparedMotion(i, rec.action_id, split, rec.frames, lie.omega,
                                      lie.root_translation,
                                      measure_bone_lengths(rec.frames, manifest.skeleton)))
    train = [m.joints for m in motions if m.split == "train"]
    if not train:
        raise PreprocessError("manifest has no training records")
    stats = compute_stats(train, manifest.skeleton.root_index)
    return PreparedDataset(manifest.skeleton, list(manifest.actions), motions, stats)


def crop(joints: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Random window of ``length`` frames; short motions hold their last frame."""
    T = joints.shape[0]
    if T >= length:
        s = int(rng.integers(0, T - length + 1))
        return joints[s:s + length]
    pad = np.repeat(joints[-1:], length - T, axis=0)
    return np.concatenate([joints, pad], axis=0)


def sample_batch(motions: list[PreparedMotion], batch_size: int, length: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniformly pick motions (with replacement) and crop each.

    Returns joints (B, length, J, 3) and action ids (B,).
    """
    if not motions:
        raise PreprocessError("no motions to sample from")
    idx = rng.integers(0, len(motions), size=batch_size)
    joints = np.stack([crop(motions[i].joints, length, rng) for i in idx])
    actions = np.array([motions[i].action_id for i in idx], dtype=np.int64)
    return joints, actions
