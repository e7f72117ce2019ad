"""Parameterized layers and the latent-variable helpers built on the tape."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .. import kinematics
from . import tensor as T
from .tensor import ShapeError, Tensor

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Anything with named parameters; children are walked by attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_(self):
        for p in self.parameters().values():
            p.data[...] = 0.0
        return self


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        self.in_features, self.out_features = in_features, out_features
        w = (_uniform(rng, (out_features, in_features), in_features) if rng is not None
             else np.zeros((out_features, in_features)))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros((1, out_features)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class GRUCell(Module):
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator | None = None):
        self.input_size, self.hidden_size = input_size, hidden_size
        H = hidden_size
        if rng is None:
            w_ih, w_hh = np.zeros((3 * H, input_size)), np.zeros((3 * H, H))
        else:
            w_ih = _uniform(rng, (3 * H, input_size), input_size)
            w_hh = _uniform(rng, (3 * H, H), H)
        self.w_ih = Tensor(w_ih, requires_grad=True)
        self.w_hh = Tensor(w_hh, requires_grad=True)
        self.bias = Tensor(np.zeros((1, 3 * H)), requires_grad=True)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return gru_step(self, x, h)


def gru_step(cell: GRUCell, x: Tensor, h: Tensor) -> Tensor:
    if x.shape[1] != cell.input_size or h.shape[1] != cell.hidden_size:
        raise ShapeError(
            f"gru_step: expected input {cell.input_size} / hidden {cell.hidden_size}, "
            f"got {x.shape} / {h.shape}")
    return T.gru(x, h, cell.w_ih, cell.w_hh, cell.bias)


def reparameterize(mu: Tensor, logvar: Tensor, rng: np.random.Generator) -> Tensor:
    """mu + exp(logvar / 2) * eps; eps is a constant, so no gradient reaches it."""
    if mu.shape != logvar.shape:
        raise ShapeError("reparameterize: mu and logvar shapes differ")
    eps = rng.standard_normal(mu.shape)
    std = T.exp(T.scale(T.clip(logvar, LOGVAR_MIN, LOGVAR_MAX), 0.5))
    return T.add(mu, T.mul(std, Tensor(eps)))


def gaussian_kl(mu_q: Tensor, logvar_q: Tensor, mu_p: Tensor, logvar_p: Tensor) -> Tensor:
    """KL(N(mu_q, e^lv_q) || N(mu_p, e^lv_p)) for diagonal Gaussians.

    Summed over latent dimensions and over batch rows.
    """
    if not (mu_q.shape == logvar_q.shape == mu_p.shape == logvar_p.shape):
        raise ShapeError("gaussian_kl: shapes differ")
    diff = T.sub(mu_q, mu_p)
    ratio = T.mul(T.add(T.exp(logvar_q), T.square(diff)), T.exp(T.scale(logvar_p, -1.0)))
    per_dim = T.add(T.sub(logvar_p, logvar_q), ratio)
    n = per_dim.data.size
    return T.scale(T.sub(T.sum_all(per_dim), Tensor(float(n))), 0.5)


def forward_kinematics(omega: Tensor, root: Tensor, skeleton: kinematics.Skeleton) -> Tensor:
    """Differentiable FK: omega (B, 3N), root (B, 3) -> world joints (B, 3J).

    Bone lengths are constants. The backward pass pushes joint gradients up
    the chains and through the analytic Rodrigues Jacobian.
    """
    B = omega.shape[0]
    N, J = skeleton.bone_count, skeleton.joint_count
    if omega.shape != (B, 3 * N) or root.shape != (B, 3):
        raise ShapeError(f"forward_kinematics: expected ({B}, {3 * N}) and ({B}, 3), "
                         f"got {omega.shape} and {root.shape}")
    w = omega.data.reshape(B, N, 3)
    rot, drot = kinematics.exp_so3_jacobian(w)
    lengths = skeleton.bone_lengths
    frames = np.empty_like(rot)
    joints = np.empty((B, J, 3))
    joints[:, skeleton.root_index] = root.data
    for n in skeleton.order:
        s, e = skeleton.bones[n]
        p = skeleton.parent_bone[n]
        frames[:, n] = rot[:, n] if p < 0 else frames[:, p] @ rot[:, n]
        joints[:, e] = joints[:, s] + frames[:, n, :, 0] * lengths[n]

    def backward(g):
        gj = g.reshape(B, J, 3)
        subtree = gj.copy()  # joint grad plus everything hanging below it
        g_frame = np.zeros_like(frames)
        g_rot = np.empty_like(rot)
        for n in reversed(skeleton.order):
            s, e = skeleton.bones[n]
            p = skeleton.parent_bone[n]
            g_frame[:, n, :, 0] += subtree[:, e] * lengths[n]
            subtree[:, s] += subtree[:, e]
            if p < 0:
                g_rot[:, n] = g_frame[:, n]
            else:
                g_rot[:, n] = np.swapaxes(frames[:, p], 1, 2) @ g_frame[:, n]
                g_frame[:, p] += g_frame[:, n] @ np.swapaxes(rot[:, n], 1, 2)
        g_omega = drot.reshape(B, N, 3, 9) @ g_rot.reshape(B, N, 9, 1)
        return g_omega.reshape(B, 3 * N), subtree[:, skeleton.root_index]

    return T.custom("forward_kinematics", (omega, root), joints.reshape(B, 3 * J), backward)
