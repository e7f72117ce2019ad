"""Reference implementations that share no code with the package.

Rotations go through unit quaternions instead of the Rodrigues formula,
matrix square roots through high-precision Denman-Beavers iteration, and
expectations over random subsets through exhaustive enumeration.
"""
from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np


def quat_rotation(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = math.sqrt(float(w @ w))
    if theta == 0.0:
        return np.eye(3)
    x, y, z = (math.sin(theta / 2) * w / theta).tolist()
    s = math.cos(theta / 2)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - s * z), 2 * (x * z + s * y)],
        [2 * (x * y + s * z), 1 - 2 * (x * x + z * z), 2 * (y * z - s * x)],
        [2 * (x * z - s * y), 2 * (y * z + s * x), 1 - 2 * (x * x + y * y)],
    ])


def axis_from_eigen(R) -> np.ndarray:
    """Unit rotation axis as the eigenvector of R for eigenvalue 1."""
    vals, vecs = np.linalg.eig(np.asarray(R, dtype=float))
    k = int(np.argmin(np.abs(vals - 1.0)))
    u = np.real(vecs[:, k])
    return u / np.linalg.norm(u)


def chain_fk(omega, root, chains, lengths, root_index=0) -> np.ndarray:
    """Loop-per-chain FK: walk every chain, carrying the accumulated rotation
    of the joint the chain starts from (identity at the root)."""
    joints = {root_index: np.asarray(root, dtype=float)}
    frame_at = {root_index: np.eye(3)}
    n = 0
    pending = [list(c) for c in chains]
    # bones are numbered in listed chain order
    numbering = []
    for c in chains:
        for a, b in zip(c[:-1], c[1:]):
            numbering.append((a, b))
    while pending:
        for c in list(pending):
            if c[0] not in joints:
                continue
            G = frame_at[c[0]]
            for a, b in zip(c[:-1], c[1:]):
                n = numbering.index((a, b))
                G = G @ quat_rotation(omega[n])
                joints[b] = joints[a] + G[:, 0] * lengths[n]
                frame_at[b] = G
            pending.remove(c)
    return np.array([joints[j] for j in range(len(joints))])


def sqrtm_denman_beavers(A, digits: int = 50, iterations: int = 60):
    mpmath.mp.dps = digits
    Y = mpmath.matrix(A.tolist())
    Z = mpmath.eye(A.shape[0])
    for _ in range(iterations):
        Yi, Zi = mpmath.inverse(Y), mpmath.inverse(Z)
        Y, Z = (Y + Zi) / 2, (Z + Yi) / 2
    return Y


def fid_oracle(mu_a, cov_a, mu_b, cov_b) -> float:
    mpmath.mp.dps = 50
    Ca, Cb = mpmath.matrix(cov_a.tolist()), mpmath.matrix(cov_b.tolist())
    prod = Ca * Cb
    S = sqrtm_denman_beavers(np.array(prod.tolist(), dtype=object))
    d = mpmath.matrix((np.asarray(mu_a) - np.asarray(mu_b)).tolist())
    tr = lambda M: sum(M[i, i] for i in range(M.rows))
    val = (d.T * d)[0] + tr(Ca) + tr(Cb) - 2 * tr(S)
    return float(mpmath.re(val))


def kl_quadrature(mu_q, var_q, mu_p, var_p) -> float:
    mpmath.mp.dps = 30
    q = lambda x: mpmath.npdf(x, mu_q, mpmath.sqrt(var_q))
    p = lambda x: mpmath.npdf(x, mu_p, mpmath.sqrt(var_p))
    sd = math.sqrt(var_q)
    f = lambda x: q(x) * (mpmath.log(q(x)) - mpmath.log(p(x)))
    return float(mpmath.quad(f, [mu_q - 40 * sd, mu_q, mu_q + 40 * sd]))


def _subsets(n: int, size: int):
    """Every equally likely draw of ``size`` indices from ``n``: ordered
    without replacement if n >= size, else ordered with replacement."""
    if n >= size:
        return list(itertools.permutations(range(n), size))
    return list(itertools.product(range(n), repeat=size))


def paired_distance_moments(features, size: int) -> tuple[float, float]:
    """Exact mean and variance of mean_k |v_i_k - v_j_k| over two independent draws."""
    f = np.asarray(features, dtype=float)
    draws = _subsets(len(f), size)
    vals = np.array([np.mean(np.linalg.norm(f[list(a)] - f[list(b)], axis=1))
                     for a in draws for b in draws])
    return float(vals.mean()), float(vals.var())
