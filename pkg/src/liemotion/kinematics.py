"""SO(3) maps and skeleton kinematics.

Every bone carries a local frame with the bone pointing along +x from its
starting joint. A pose is one axis-angle vector per bone (relative to the
parent bone's frame) plus the root joint's world position. Rotations compose
down each kinematic chain; chains that branch off another chain's joint start
from that joint's accumulated frame.

All functions accept arbitrary leading batch dimensions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SMALL_ANGLE = 1e-4
NEAR_PI = 1e-3
ROTATION_TOL = 1e-9


class KinematicsError(ValueError):
    pass


class DegenerateInputError(KinematicsError):
    pass


# ----------------------------------------------------------------------------
# skeleton
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Joint topology as kinematic chains plus per-bone lengths (meters).

    Bones are numbered in chain order: chain 0's bones first, then chain 1's,
    and so on. Each chain lists its starting joint first, so a chain with m
    joints contributes m - 1 bones.
    """

    joints: tuple[str, ...]
    chains: tuple[tuple[int, ...], ...]
    bone_lengths: np.ndarray
    root_index: int = 0
    name: str = "skeleton"
    chain_names: tuple[str, ...] = ()
    # derived
    bones: tuple[tuple[int, int], ...] = field(init=False, repr=False)
    parent_bone: tuple[int, ...] = field(init=False, repr=False)
    order: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        joints = tuple(str(j) for j in self.joints)
        chains = tuple(tuple(int(i) for i in c) for c in self.chains)
        names = tuple(str(c) for c in self.chain_names) or tuple(f"chain{k}" for k in range(len(chains)))
        if len(names) != len(chains):
            raise KinematicsError("one name per chain")
        if len(set(joints)) != len(joints):
            raise KinematicsError("joint names must be unique")
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "chains", chains)
        object.__setattr__(self, "chain_names", names)
        J = len(joints)
        if not chains:
            raise KinematicsError("skeleton needs at least one kinematic chain")
        if not 0 <= self.root_index < J:
            raise KinematicsError(f"root index {self.root_index} out of range")

        bones = []
        for k, chain in enumerate(chains):
            if len(chain) < 2:
                raise KinematicsError(f"chain {k} has fewer than two joints")
            for i in chain:
                if not 0 <= i < J:
                    raise KinematicsError(f"chain {k} references unknown joint {i}")
            bones.extend(zip(chain[:-1], chain[1:]))

        children = [b[1] for b in bones]
        covered = sorted(children)
        expected = sorted(i for i in range(J) if i != self.root_index)
        if covered != expected:
            raise KinematicsError(
                "chains must reach every non-root joint exactly once as a chain member"
            )

        lengths = np.array(self.bone_lengths, dtype=np.float64).reshape(-1)
        if lengths.shape[0] != len(bones):
            raise KinematicsError(
                f"expected {len(bones)} bone lengths, got {lengths.shape[0]}"
            )
        if not np.all(np.isfinite(lengths)) or np.any(lengths <= 0):
            raise KinematicsError("bone lengths must be finite and strictly positive")
        lengths.setflags(write=False)
        object.__setattr__(self, "bone_lengths", lengths)

        ending_at = {child: n for n, (_, child) in enumerate(bones)}
        parent = tuple(ending_at.get(start, -1) for start, _ in bones)

        # parents before children; chains listed out of order are still fine
        order, placed = [], set()
        while len(order) < len(bones):
            progressed = False
            for n in range(len(bones)):
                if n not in placed and (parent[n] < 0 or parent[n] in placed):
                    order.append(n)
                    placed.add(n)
                    progressed = True
            if not progressed:
                raise KinematicsError("chains are not anchored to the root")

        object.__setattr__(self, "bones", tuple(bones))
        object.__setattr__(self, "parent_bone", parent)
        object.__setattr__(self, "order", tuple(order))

    @property
    def joint_count(self) -> int:
        return len(self.joints)

    @property
    def bone_count(self) -> int:
        return len(self.bones)

    def bone_index(self, child: str | int) -> int:
        """Index of the bone ending at ``child`` (joint name or index)."""
        j = self.joints.index(child) if isinstance(child, str) else int(child)
        for n, (_, c) in enumerate(self.bones):
            if c == j:
                return n
        raise KeyError(child)

    def with_bone_lengths(self, lengths) -> "Skeleton":
        return Skeleton(self.joints, self.chains, np.asarray(lengths, dtype=np.float64),
                        self.root_index, self.name, self.chain_names)

    def __eq__(self, other):
        if not isinstance(other, Skeleton):
            return NotImplemented
        return (self.joints == other.joints and self.chains == other.chains
                and self.root_index == other.root_index and self.name == other.name
                and self.chain_names == other.chain_names
                and np.array_equal(self.bone_lengths, other.bone_lengths))

    def __hash__(self):
        return hash((self.joints, self.chains, self.root_index, self.name,
                     self.bone_lengths.tobytes()))


def scale_skeleton(skeleton: Skeleton, factors) -> Skeleton:
    """Multiply bone lengths elementwise; a scalar scales every bone."""
    f = np.broadcast_to(np.asarray(factors, dtype=np.float64),
                        skeleton.bone_lengths.shape)
    if not np.all(np.isfinite(f)) or np.any(f <= 0):
        raise KinematicsError("scale factors must be strictly positive")
    return skeleton.with_bone_lengths(skeleton.bone_lengths * f)


@dataclass
class LiePose:
    """Per-bone so(3) vectors ``omega`` (..., N, 3) and root position (..., 3).

    A leading time axis turns this into a motion.
    """

    omega: np.ndarray
    root_translation: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)
        if self.omega.shape[-1] != 3 or self.root_translation.shape[-1] != 3:
            raise KinematicsError("omega and root translation must be 3-vectors")
        if self.omega.shape[:-2] != self.root_translation.shape[:-1]:
            raise KinematicsError("omega and root translation batch shapes differ")

    def canonical(self) -> "LiePose":
        return LiePose(canonicalize(self.omega), self.root_translation.copy())


@dataclass
class JointPose:
    """Per-joint world coordinates (..., J, 3) in meters."""

    joints: np.ndarray

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim < 2 or self.joints.shape[-1] != 3:
            raise KinematicsError("joint array must have shape (..., J, 3)")
        if not np.all(np.isfinite(self.joints)):
            raise KinematicsError("joint coordinates must be finite")


# ----------------------------------------------------------------------------
# so(3) <-> SO(3)
# ----------------------------------------------------------------------------


def skew(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def unskew(W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    return np.stack([W[..., 2, 1], W[..., 0, 2], W[..., 1, 0]], axis=-1)


def _rodrigues_coefficients(theta):
    """sin(t)/t, (1-cos t)/t^2 and their derivatives divided by t."""
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    s, c = np.sin(t), np.cos(t)
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, s / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - c) / (t * t))
    # a'(t)/t and b'(t)/t
    da = np.where(small, -1.0 / 3.0 + t2 / 30.0, (t * c - s) / t**3)
    db = np.where(small, -1.0 / 12.0 + t2 / 180.0, (t * s - 2.0 * (1.0 - c)) / t**4)
    return a, b, da, db


def exp_so3(w) -> np.ndarray:
    """Rodrigues: I + sin(t)/t W + (1 - cos t)/t^2 W^2 with t = |w|."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w, axis=-1)
    a, b, _, _ = _rodrigues_coefficients(theta)
    W = skew(w)
    return np.eye(3) + a[..., None, None] * W + b[..., None, None] * (W @ W)


def exp_so3_jacobian(w) -> tuple[np.ndarray, np.ndarray]:
    """Return R = exp(w) and dR with dR[..., k, :, :] = dR/dw_k."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w, axis=-1)
    a, b, da, db = _rodrigues_coefficients(theta)
    W = skew(w)
    W2 = W @ W
    R = np.eye(3) + a[..., None, None] * W + b[..., None, None] * W2
    E = skew(np.eye(3))  # generators, E[k] = skew(e_k)
    EW = E @ W[..., None, :, :]
    WE = W[..., None, :, :] @ E
    radial = da[..., None, None] * W + db[..., None, None] * W2
    dR = (a[..., None, None, None] * E
          + b[..., None, None, None] * (EW + WE)
          + w[..., :, None, None] * radial[..., None, :, :])
    return R, dR


def is_rotation(R, tol: float = ROTATION_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    ortho = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max(axis=(-2, -1))
    det = np.linalg.det(R)
    return (ortho <= tol) & (np.abs(det - 1.0) <= tol)


def log_so3(R, tol: float = ROTATION_TOL) -> np.ndarray:
    """Axis-angle vector with norm in [0, pi].

    The angle comes from atan2 of the antisymmetric and trace parts, which is
    the same quantity as arccos((tr R - 1) / 2) but stays accurate near 0 and pi.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise KinematicsError("expected (..., 3, 3) rotation matrices")
    if not np.all(is_rotation(R, tol)):
        raise KinematicsError("matrix is not a rotation within tolerance")

    v = np.stack([R[..., 2, 1] - R[..., 1, 2],
                  R[..., 0, 2] - R[..., 2, 0],
                  R[..., 1, 0] - R[..., 0, 1]], axis=-1)
    cos_t = (np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0
    sin_t = np.linalg.norm(v, axis=-1) / 2.0
    theta = np.arctan2(sin_t, cos_t)

    small = theta < SMALL_ANGLE
    t2 = theta * theta
    safe_sin = np.where(small, 1.0, np.sin(theta))
    factor = np.where(small, 0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0,
                      theta / (2.0 * safe_sin))
    w = factor[..., None] * v

    near_pi = theta > np.pi - NEAR_PI
    if np.any(near_pi):
        w = w.copy()
        Rp, vp, tp = R[near_pi], v[near_pi], theta[near_pi]
        cp = np.cos(tp)
        sym = 0.5 * (Rp + np.swapaxes(Rp, -1, -2))
        uu = (sym - cp[:, None, None] * np.eye(3)) / (1.0 - cp)[:, None, None]
        col = np.argmax(np.diagonal(uu, axis1=-2, axis2=-1), axis=-1)
        idx = np.arange(len(col))
        u = uu[idx, :, col] / np.sqrt(uu[idx, col, col])[:, None]
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        dot = np.einsum("ni,ni->n", u, vp)
        # exactly pi: both signs are valid; keep the first nonzero component positive
        first = u[idx, np.argmax(np.abs(u) > 1e-12, axis=-1)]
        sign = np.where(np.abs(dot) > 1e-300, np.sign(dot), np.sign(first))
        w[near_pi] = (sign * tp)[:, None] * u
    return w


def canonicalize(w) -> np.ndarray:
    """Equivalent axis-angle vectors with norm reduced to [0, pi]."""
    return log_so3(exp_so3(w), tol=1e-6)


# ----------------------------------------------------------------------------
# forward / inverse kinematics
# ----------------------------------------------------------------------------


def fk_arrays(omega, root, skeleton: Skeleton, bone_lengths=None):
    """Array-level forward kinematics.

    Returns (joints (..., J, 3), rotations (..., N, 3, 3), frames (..., N, 3, 3))
    where ``frames[n]`` is bone n's accumulated world rotation.
    """
    omega = np.asarray(omega, dtype=np.float64)
    root = np.asarray(root, dtype=np.float64)
    N = skeleton.bone_count
    if omega.shape[-2:] != (N, 3):
        raise KinematicsError(f"expected omega of shape (..., {N}, 3), got {omega.shape}")
    lengths = skeleton.bone_lengths if bone_lengths is None else np.asarray(bone_lengths)
    batch = omega.shape[:-2]
    root = np.broadcast_to(root, batch + (3,))
    lengths = np.broadcast_to(lengths, batch + (N,))

    rot = exp_so3(omega)
    frames = np.empty_like(rot)
    joints = np.empty(batch + (skeleton.joint_count, 3))
    joints[..., skeleton.root_index, :] = root
    for n in skeleton.order:
        start, end = skeleton.bones[n]
        p = skeleton.parent_bone[n]
        frames[..., n, :, :] = rot[..., n, :, :] if p < 0 else frames[..., p, :, :] @ rot[..., n, :, :]
        joints[..., end, :] = joints[..., start, :] + frames[..., n, :, 0] * lengths[..., n, None]
    return joints, rot, frames


def forward_kinematics(pose: LiePose, skeleton: Skeleton) -> JointPose:
    joints, _, _ = fk_arrays(pose.omega, pose.root_translation, skeleton)
    return JointPose(joints)


def measure_bone_lengths(joints, skeleton: Skeleton) -> np.ndarray:
    joints = np.asarray(joints, dtype=np.float64)
    starts = [b[0] for b in skeleton.bones]
    ends = [b[1] for b in skeleton.bones]
    return np.linalg.norm(joints[..., ends, :] - joints[..., starts, :], axis=-1)


def _align_x(v):
    """Minimal-twist axis-angle vector rotating +x onto the unit vector v."""
    axis = np.stack([np.zeros_like(v[..., 0]), -v[..., 2], v[..., 1]], axis=-1)
    s = np.linalg.norm(axis, axis=-1)
    angle = np.arctan2(s, v[..., 0])
    unit = axis / np.where(s > 0, s, 1.0)[..., None]
    # antiparallel: any perpendicular axis works, take +z
    unit = np.where((s > 0)[..., None], unit, np.array([0.0, 0.0, 1.0]))
    return unit * angle[..., None]


def inverse_kinematics(pose: JointPose, skeleton: Skeleton, eps: float = 1e-12) -> LiePose:
    """Recover per-bone rotations from joint positions.

    Twist about a bone's own axis is unobservable; the minimal-twist rotation
    is chosen. Reproduction via FK needs the bone lengths measured from
    ``pose`` (see ``measure_bone_lengths``).
    """
    joints = pose.joints
    if joints.shape[-2] != skeleton.joint_count:
        raise KinematicsError(
            f"expected {skeleton.joint_count} joints, got {joints.shape[-2]}")
    batch = joints.shape[:-2]
    N = skeleton.bone_count
    omega = np.empty(batch + (N, 3))
    frames = np.empty(batch + (N, 3, 3))
    for n in skeleton.order:
        start, end = skeleton.bones[n]
        d = joints[..., end, :] - joints[..., start, :]
        length = np.linalg.norm(d, axis=-1)
        if np.any(length <= eps):
            raise DegenerateInputError(
                f"coincident joints {skeleton.joints[start]!r} and {skeleton.joints[end]!r}")
        u = d / length[..., None]
        p = skeleton.parent_bone[n]
        if p >= 0:
            u = np.einsum("...ji,...j->...i", frames[..., p, :, :], u)
        omega[..., n, :] = _align_x(u)
        R = exp_so3(omega[..., n, :])
        frames[..., n, :, :] = R if p < 0 else frames[..., p, :, :] @ R
    root = joints[..., skeleton.root_index, :].copy()
    return LiePose(omega, root)
