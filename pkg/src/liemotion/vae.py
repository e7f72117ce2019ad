"""Action-conditioned temporal VAE with a learned prior and an FK decoder.

Three networks run in lockstep over time:

* posterior q(z_t | p_1..p_t, a, c_t)  fed the ground-truth pose p_t
* prior     p(z_t | p_1..p_{t-1}, a, c_t)  fed the previous pose
* generator (p_{t-1}, a, c_t, z_t) -> Lie parameters + root -> FK -> joints

Poses enter the networks as normalized pose vectors (root-relative joints
with the absolute root in the root slot). The generator's root output is in
normalized units and is mapped back to meters before FK, so its output is
directly comparable with world-space targets.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import core
from .core import tensor as T
from .core import GRUCell, Linear, Module, Tape, Tensor
from .data.preprocess import NormStats, pose_vector_matrix, pose_vectors
from .kinematics import LiePose, Skeleton, canonicalize, fk_arrays


class TrainingDivergence(RuntimeError):
    """Raised when the loss or an intermediate goes non-finite."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass(frozen=True)
class VaeConfig:
    pose_dim: int
    action_count: int
    bone_count: int
    latent_dim: int = 30
    hidden_dim: int = 128
    encoder_out: int = 128
    lambda_kl: float = 0.01
    teacher_forcing_rate: float = 0.6
    sequence_length: int = 60
    generator_gru_layers: int = 2

    def __post_init__(self):
        for name in ("pose_dim", "action_count", "bone_count", "latent_dim", "hidden_dim",
                     "encoder_out", "sequence_length", "generator_gru_layers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"VaeConfig.{name} must be positive")
        if not 0.0 <= self.teacher_forcing_rate <= 1.0:
            raise ValueError("VaeConfig.teacher_forcing_rate must lie in [0, 1]")
        if self.lambda_kl < 0:
            raise ValueError("VaeConfig.lambda_kl must be non-negative")

    @property
    def condition_dim(self) -> int:
        return self.pose_dim + self.action_count + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VaeConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown VaeConfig fields: {sorted(unknown)}")
        return cls(**d)


class GaussianNet(Module):
    """encoder -> GRU -> (mu, logvar) heads; used for both posterior and prior."""

    def __init__(self, in_dim: int, cfg: VaeConfig, rng=None):
        self.encoder = Linear(in_dim, cfg.encoder_out, rng)
        self.gru = GRUCell(cfg.encoder_out, cfg.hidden_dim, rng)
        self.mu_net = Linear(cfg.hidden_dim, cfg.latent_dim, rng)
        self.logvar_net = Linear(cfg.hidden_dim, cfg.latent_dim, rng)

    def step(self, x: Tensor, h: Tensor):
        h = self.gru(self.encoder(x), h)
        return self.mu_net(h), self.logvar_net(h), h


class Generator(Module):
    def __init__(self, cfg: VaeConfig, rng=None):
        n_lie = 3 * cfg.bone_count
        self.encoder = Linear(cfg.condition_dim + cfg.latent_dim, cfg.encoder_out, rng)
        self.grus = [GRUCell(cfg.encoder_out if i == 0 else cfg.hidden_dim, cfg.hidden_dim, rng)
                     for i in range(cfg.generator_gru_layers)]
        self.decoder = Linear(cfg.hidden_dim, n_lie + 3, rng)
        self.lie_output = Linear(n_lie, n_lie, rng)


class VaeModel(Module):
    """Parameters of all three networks plus the fixed pose normalization.

    With ``rng=None`` every parameter is zero.
    """

    def __init__(self, cfg: VaeConfig, skeleton: Skeleton, stats: NormStats | None = None,
                 rng: np.random.Generator | None = None):
        if cfg.bone_count != skeleton.bone_count or cfg.pose_dim != 3 * skeleton.joint_count:
            raise ValueError("VaeConfig dimensions do not match the skeleton")
        self.posterior = GaussianNet(cfg.condition_dim, cfg, rng)
        self.prior = GaussianNet(cfg.condition_dim, cfg, rng)
        self.generator = Generator(cfg, rng)
        self._cfg = cfg
        self._skeleton = skeleton
        self.set_stats(stats or NormStats.identity(skeleton.joint_count, skeleton.root_index))

    @property
    def config(self) -> VaeConfig:
        return self._cfg

    @property
    def skeleton(self) -> Skeleton:
        return self._skeleton

    def set_stats(self, stats: NormStats):
        self._stats = stats
        A = pose_vector_matrix(self._skeleton.joint_count, stats.root_index)
        # world joints (flattened) -> normalized pose vector, as one affine map
        self._to_input = Tensor(A / stats.std[None, :])
        self._input_shift = Tensor((-stats.mean / stats.std)[None, :])

    @property
    def stats(self) -> NormStats:
        return self._stats

    def normalize_joints(self, joints: Tensor) -> Tensor:
        """(B, 3J) world joints -> (B, D) network input; differentiable."""
        return T.add(T.matmul(joints, self._to_input), self._input_shift)


@dataclass
class GenerationState:
    hidden: dict[str, Tensor]
    prev_pose: Tensor  # normalized pose vector fed as p_{t-1}
    t: int
    length: int

    @property
    def time_counter(self) -> float:
        return self.t / self.length


def initial_state(model: VaeModel, batch: int, length: int) -> GenerationState:
    cfg = model.config
    zeros = lambda: Tensor(np.zeros((batch, cfg.hidden_dim)))
    hidden = {"posterior": zeros(), "prior": zeros()}
    for i in range(cfg.generator_gru_layers):
        hidden[f"generator.{i}"] = zeros()
    return GenerationState(hidden, Tensor(np.zeros((batch, cfg.pose_dim))), 1, length)


def _condition(pose: Tensor, onehot: Tensor, c_t: float) -> Tensor:
    c = Tensor(np.full((pose.shape[0], 1), float(c_t)))
    return T.concat([pose, onehot, c], axis=1)


def one_hot(actions, count: int) -> Tensor:
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    if np.any(actions < 0) or np.any(actions >= count):
        raise ValueError(f"action ids must lie in [0, {count})")
    out = np.zeros((actions.size, count))
    out[np.arange(actions.size), actions] = 1.0
    return Tensor(out)


def _check(name: str, x: Tensor, width: int):
    if x.shape[1] != width:
        raise T.ShapeError(f"{name}: expected width {width}, got {x.shape}")


def posterior_step(model: VaeModel, state: GenerationState, pose: Tensor, onehot: Tensor,
                   c_t: float):
    """Advance the posterior on the ground-truth normalized pose p_t."""
    _check("posterior_step pose", pose, model.config.pose_dim)
    _check("posterior_step action", onehot, model.config.action_count)
    mu, lv, h = model.posterior.step(_condition(pose, onehot, c_t), state.hidden["posterior"])
    state.hidden["posterior"] = h
    return mu, lv


def prior_step(model: VaeModel, state: GenerationState, prev_pose: Tensor, onehot: Tensor,
               c_t: float):
    """Advance the prior on the previous normalized pose (zeros at t = 1)."""
    _check("prior_step pose", prev_pose, model.config.pose_dim)
    _check("prior_step action", onehot, model.config.action_count)
    mu, lv, h = model.prior.step(_condition(prev_pose, onehot, c_t), state.hidden["prior"])
    state.hidden["prior"] = h
    return mu, lv


def generator_step(model: VaeModel, state: GenerationState, prev_pose: Tensor, onehot: Tensor,
                   c_t: float, z: Tensor, skeleton: Skeleton | None = None):
    """Decode one frame. Returns (omega (B, 3N), root (B, 3), joints (B, 3J))."""
    cfg = model.config
    skeleton = skeleton or model.skeleton
    if skeleton.bone_count != cfg.bone_count:
        raise ValueError("skeleton bone count does not match the model")
    _check("generator_step pose", prev_pose, cfg.pose_dim)
    _check("generator_step latent", z, cfg.latent_dim)
    gen = model.generator
    x = gen.encoder(T.concat([_condition(prev_pose, onehot, c_t), z], axis=1))
    for i, cell in enumerate(gen.grus):
        x = cell(x, state.hidden[f"generator.{i}"])
        state.hidden[f"generator.{i}"] = x
    out = gen.decoder(x)
    n_lie = 3 * cfg.bone_count
    omega = gen.lie_output(T.slice_cols(out, 0, n_lie))
    st = model.stats
    root = T.add(T.mul(T.slice_cols(out, n_lie, n_lie + 3), Tensor(st.root_std[None, :])),
                 Tensor(st.root_mean[None, :]))
    joints = core.forward_kinematics(omega, root, skeleton)
    return omega, root, joints


@dataclass
class SequenceLoss:
    loss: Tensor          # batch mean of sum_t (l2 + lambda * KL)
    reconstruction: float  # batch mean of sum_t l2
    kl: float              # batch mean of sum_t KL
    teacher_forced: np.ndarray


def sequence_loss(model: VaeModel, joints: np.ndarray, actions, rng: np.random.Generator,
                  teacher_forcing: np.ndarray | None = None, trace: list | None = None
                  ) -> SequenceLoss:
    """Objective for a batch of world-space joint sequences (B, T, J, 3).

    Bernoulli(p_tf) is drawn once per sequence (row) unless
    ``teacher_forcing`` is given. ``trace`` collects per-step generator
    inputs for instrumentation.
    """
    cfg = model.config
    joints = np.asarray(joints, dtype=np.float64)
    B, L = joints.shape[:2]
    if joints.shape[2:] != (model.skeleton.joint_count, 3):
        raise T.ShapeError(f"expected joints (B, T, {model.skeleton.joint_count}, 3), got {joints.shape}")
    if L < 1:
        raise ValueError("sequence must have at least one frame")
    if teacher_forcing is None:
        teacher_forcing = rng.random(B) < cfg.teacher_forcing_rate
    tf = np.asarray(teacher_forcing, dtype=bool).reshape(B)
    tf_mask = Tensor(tf.astype(np.float64)[:, None])
    free_mask = Tensor((~tf).astype(np.float64)[:, None])

    onehot = one_hot(actions, cfg.action_count)
    flat = joints.reshape(B, L, -1)
    truth = model.stats.normalize(pose_vectors(joints, model.skeleton.root_index))
    state = initial_state(model, B, L)
    gen_prev = state.prev_pose
    total, recon, kl_total = None, 0.0, 0.0
    for t in range(1, L + 1):
        c_t = t / L
        gt_prev = Tensor(truth[:, t - 2]) if t > 1 else Tensor(np.zeros((B, cfg.pose_dim)))
        mu_q, lv_q = posterior_step(model, state, Tensor(truth[:, t - 1]), onehot, c_t)
        mu_p, lv_p = prior_step(model, state, gt_prev, onehot, c_t)
        z = core.reparameterize(mu_q, lv_q, rng)
        if t == 1 or tf.all():
            prev = gt_prev
        elif not tf.any():
            prev = gen_prev
        else:
            prev = T.add(T.mul(gt_prev, tf_mask), T.mul(gen_prev, free_mask))
        if trace is not None:
            trace.append({"t": t, "generator_input": prev.data.copy(),
                          "ground_truth_prev": gt_prev.data.copy()})
        _, _, pred = generator_step(model, state, prev, onehot, c_t, z)
        l2 = T.sum_all(T.square(T.sub(pred, Tensor(flat[:, t - 1]))))
        kl = core.gaussian_kl(mu_q, T.clip(lv_q, core.layers.LOGVAR_MIN, core.layers.LOGVAR_MAX),
                              mu_p, T.clip(lv_p, core.layers.LOGVAR_MIN, core.layers.LOGVAR_MAX))
        step = T.add(l2, T.scale(kl, cfg.lambda_kl)) if cfg.lambda_kl else l2
        total = step if total is None else T.add(total, step)
        recon += l2.item()
        kl_total += kl.item()
        gen_prev = model.normalize_joints(pred)
    return SequenceLoss(T.scale(total, 1.0 / B), recon / B, kl_total / B, tf)


@dataclass
class StepResult:
    loss: float
    reconstruction: float
    kl: float
    grads: dict[str, np.ndarray]
    teacher_forced: np.ndarray


def _snapshot(model: VaeModel, extra: dict) -> dict:
    params = model.parameters()
    snap = {name: {"max_abs": float(np.max(np.abs(p.data))),
                   "finite": bool(np.all(np.isfinite(p.data)))} for name, p in params.items()}
    snap.update(extra)
    return snap


def train_sequence(model: VaeModel, joints: np.ndarray, actions, rng: np.random.Generator,
                   teacher_forcing: np.ndarray | None = None, trace: list | None = None
                   ) -> StepResult:
    """Loss and gradients for every parameter of the three networks."""
    params = model.parameters()
    try:
        with Tape() as tape:
            out = sequence_loss(model, joints, actions, rng, teacher_forcing, trace)
        grads = tape.gradient(out.loss, list(params.values()))
    except T.NonFiniteError as exc:
        raise TrainingDivergence(f"non-finite value during training: {exc}",
                                 _snapshot(model, {"error": str(exc)})) from None
    loss = out.loss.item()
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingDivergence("non-finite loss or gradient",
                                 _snapshot(model, {"loss": float(loss)}))
    return StepResult(loss, out.reconstruction, out.kl, dict(zip(params, grads)),
                      out.teacher_forced)


@dataclass
class GeneratedMotion:
    joints: np.ndarray  # (B, T, J, 3)
    omega: np.ndarray   # (B, T, N, 3), canonicalized to norm <= pi
    root: np.ndarray    # (B, T, 3)
    actions: np.ndarray


def generate(model: VaeModel, actions, length: int, rng: np.random.Generator,
             skeleton: Skeleton | None = None) -> GeneratedMotion:
    """Sample motions from the learned prior, one per entry of ``actions``.

    The autoregressive loop always runs on the model's own skeleton, so the
    Lie output is independent of ``skeleton``; that skeleton only sets the
    bone lengths of the exported joints.
    """
    if length < 1:
        raise ValueError("length must be at least 1")
    cfg = model.config
    skeleton = skeleton or model.skeleton
    if skeleton.bone_count != model.skeleton.bone_count:
        raise ValueError("skeleton bone count differs from the model's")
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    B = actions.size
    onehot = one_hot(actions, cfg.action_count)
    state = initial_state(model, B, length)
    omegas, roots = [], []
    prev = state.prev_pose
    for t in range(1, length + 1):
        state.t = t
        c_t = t / length
        mu, lv = prior_step(model, state, prev, onehot, c_t)
        z = core.reparameterize(mu, lv, rng)
        omega, root, joints = generator_step(model, state, prev, onehot, c_t, z)
        omegas.append(omega.data.reshape(B, -1, 3))
        roots.append(root.data)
        prev = model.normalize_joints(joints)
    omega = np.stack(omegas, axis=1)
    root = np.stack(roots, axis=1)
    # exp is 2pi-periodic along each axis, so canonicalizing leaves FK unchanged
    omega = canonicalize(omega)
    joints, _, _ = fk_arrays(omega, root, skeleton)
    return GeneratedMotion(joints, omega, root, actions)


def lie_pose(motion: GeneratedMotion, b: int, t: int) -> LiePose:
    return LiePose(motion.omega[b, t], motion.root[b, t])


# ----------------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------------

@dataclass
class TrainingState:
    """Everything needed to resume training bit-exactly."""

    model: VaeModel
    adam: core.AdamState
    rng: np.random.Generator
    iteration: int = 0
    meta: dict = field(default_factory=dict)


def config_hash(obj) -> str:
    return hashlib.sha256(core.checkpoint.canonical_json(obj)).hexdigest()[:16]


def save_training_state(path, state: TrainingState) -> None:
    from .data.formats import skeleton_to_text

    model = state.model
    tensors = {f"param.{k}": p.data for k, p in model.parameters().items()}
    for k in state.adam.m:
        tensors[f"adam.m.{k}"] = state.adam.m[k]
        tensors[f"adam.v.{k}"] = state.adam.v[k]
    tensors["stats.mean"] = model.stats.mean
    tensors["stats.std"] = model.stats.std
    meta = dict(state.meta)
    meta.update({
        "format": "liemotion-vae",
        "config": model.config.to_dict(),
        "skeleton": skeleton_to_text(model.skeleton),
        "stats_root_index": model.stats.root_index,
        "adam": {"lr": state.adam.lr, "beta1": state.adam.beta1, "beta2": state.adam.beta2,
                 "eps": state.adam.eps, "weight_decay": state.adam.weight_decay,
                 "step": state.adam.step},
        "rng_state": _jsonable_rng(state.rng),
        "iteration": state.iteration,
    })
    core.save_checkpoint(path, tensors, meta)


def _jsonable_rng(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {"bit_generator": st["bit_generator"], "state": st["state"],
            "has_uint32": st["has_uint32"], "uinteger": st["uinteger"]}


def load_training_state(path) -> TrainingState:
    from .data.formats import parse_skeleton

    tensors, meta = core.load_checkpoint(path)
    if meta.get("format") != "liemotion-vae":
        raise core.CheckpointError("checkpoint does not hold a VAE model")
    cfg = VaeConfig.from_dict(meta["config"])
    skeleton = parse_skeleton(meta["skeleton"])
    stats = NormStats(tensors["stats.mean"], tensors["stats.std"], int(meta["stats_root_index"]))
    model = VaeModel(cfg, skeleton, stats)
    for k, p in model.parameters().items():
        key = f"param.{k}"
        if key not in tensors or tensors[key].shape != p.data.shape:
            raise core.CheckpointError(f"checkpoint is missing or misshapes {k}")
        p.data[...] = tensors[key]
    a = meta["adam"]
    adam = core.AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"],
                          weight_decay=a["weight_decay"], step=a["step"])
    for k in model.parameters():
        if f"adam.m.{k}" in tensors:
            adam.m[k] = tensors[f"adam.m.{k}"].copy()
            adam.v[k] = tensors[f"adam.v.{k}"].copy()
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = meta["rng_state"]
    extra = {k: v for k, v in meta.items()
             if k not in ("format", "config", "skeleton", "stats_root_index", "adam",
                          "rng_state", "iteration")}
    return TrainingState(model, adam, rng, int(meta["iteration"]), extra)
