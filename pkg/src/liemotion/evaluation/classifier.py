"""GRU action classifier whose final hidden state serves as motion feature."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import core
from ..core import tensor as T
from ..core import GRUCell, Linear, Module, Tape, Tensor
from ..data.preprocess import crop, pose_vectors


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    hidden_dim: int = 32
    crop_length: int = 24
    batch_size: int = 32
    iterations: int = 400
    lr: float = 2e-3
    weight_decay: float = 0.0


def motion_features_input(joints: np.ndarray, root_index: int) -> np.ndarray:
    """(..., T, J, 3) -> (..., T, 3J): root-centered joints, and the root
    trajectory relative to the first frame in the root slot.

    Invariant to a global translation of the whole motion.
    """
    v = pose_vectors(joints, root_index)
    r = slice(3 * root_index, 3 * root_index + 3)
    v[..., r] = v[..., r] - v[..., :1, r]
    return v


class MotionClassifier(Module):
    def __init__(self, input_dim: int, action_count: int, config: ClassifierConfig,
                 root_index: int = 0, rng: np.random.Generator | None = None):
        self.gru = GRUCell(input_dim, config.hidden_dim, rng)
        self.head = Linear(config.hidden_dim, action_count, rng)
        self._config = config
        self._root_index = root_index
        self._action_count = action_count
        self.set_normalization(np.zeros(input_dim), np.ones(input_dim))
        self.held_out_accuracy: float | None = None

    @property
    def config(self) -> ClassifierConfig:
        return self._config

    @property
    def action_count(self) -> int:
        return self._action_count

    @property
    def root_index(self) -> int:
        return self._root_index

    def set_normalization(self, mean, std):
        self._mean = np.asarray(mean, dtype=np.float64)
        self._std = np.asarray(std, dtype=np.float64)

    def _inputs(self, joints: np.ndarray) -> np.ndarray:
        return (motion_features_input(joints, self._root_index) - self._mean) / self._std

    def encode(self, joints: np.ndarray) -> Tensor:
        """(B, T, J, 3) -> final hidden state (B, H)."""
        x = self._inputs(np.asarray(joints, dtype=np.float64))
        B, L = x.shape[:2]
        h = Tensor(np.zeros((B, self._config.hidden_dim)))
        for t in range(L):
            h = self.gru(Tensor(x[:, t]), h)
        return h

    def logits(self, joints: np.ndarray) -> Tensor:
        return self.head(self.encode(joints))

    def probabilities(self, joints) -> np.ndarray:
        return T.softmax(self.logits(_batched(joints)).data)

    def predict(self, joints) -> np.ndarray:
        return np.argmax(self.logits(_batched(joints)).data, axis=1)


def _batched(joints) -> np.ndarray:
    j = np.asarray(joints, dtype=np.float64)
    return j[None] if j.ndim == 3 else j


def _group_by_length(motions):
    groups: dict[int, list[int]] = {}
    for i, m in enumerate(motions):
        groups.setdefault(np.asarray(m).shape[0], []).append(i)
    return groups


def extract_features(classifier: MotionClassifier, motions) -> np.ndarray:
    """Final hidden state for each motion; accepts a (B, T, J, 3) array, a
    single (T, J, 3) motion, or a list of motions of differing lengths."""
    if isinstance(motions, np.ndarray):
        return classifier.encode(_batched(motions)).data.copy()
    motions = list(motions)
    if not motions:
        raise ClassifierError("no motions given")
    out = np.empty((len(motions), classifier.config.hidden_dim))
    for length, idx in sorted(_group_by_length(motions).items()):
        if length < 1:
            raise ClassifierError("motion length must be at least 1")
        out[idx] = classifier.encode(np.stack([motions[i] for i in idx])).data
    return out


def recognition_accuracy(classifier: MotionClassifier, motions, labels) -> float:
    """Fraction of motions whose argmax class equals the claimed label."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise ClassifierError("recognition accuracy of an empty set")
    feats = extract_features(classifier, motions)
    pred = np.argmax(classifier.head(Tensor(feats)).data, axis=1)
    if pred.shape != labels.shape:
        raise ClassifierError("one label per motion")
    return float(np.mean(pred == labels))


def train_classifier(motions, labels, action_count: int, root_index: int,
                     rng: np.random.Generator, config: ClassifierConfig | None = None,
                     test_motions=None, test_labels=None) -> MotionClassifier:
    """Cross-entropy training on random fixed-length crops.

    ``motions`` is a list of (T, J, 3) arrays. When a test split is given,
    the held-out accuracy on crops of it is stored on the classifier.
    """
    config = config or ClassifierConfig()
    labels = np.asarray(labels, dtype=np.int64)
    if len(motions) != labels.size:
        raise ClassifierError("one label per motion")
    counts = np.bincount(labels, minlength=action_count)
    if action_count < 2 or np.count_nonzero(counts) < 2:
        raise ClassifierError("need at least two action classes")
    if np.any(counts[counts > 0] < 2):
        raise ClassifierError("need at least two motions per class")

    J = np.asarray(motions[0]).shape[1]
    feats = np.concatenate([motion_features_input(np.asarray(m), root_index) for m in motions])
    # one isotropic scale for every coordinate: all channels are in meters,
    # so per-channel whitening would blow up near-constant offsets (short
    # bones off the root) into the most prominent features
    scale = float(np.sqrt(np.mean(feats.var(axis=0))))
    clf = MotionClassifier(3 * J, action_count, config, root_index, rng)
    clf.set_normalization(feats.mean(axis=0), np.full(3 * J, scale if scale > 1e-12 else 1.0))

    params = clf.parameters()
    adam = core.AdamState(lr=config.lr, weight_decay=config.weight_decay)
    for _ in range(config.iterations):
        idx = rng.integers(0, len(motions), size=config.batch_size)
        batch = np.stack([crop(np.asarray(motions[i]), config.crop_length, rng) for i in idx])
        with Tape() as tape:
            loss = T.cross_entropy(clf.logits(batch), labels[idx])
        grads = tape.gradient(loss, list(params.values()))
        core.adam_step(params, dict(zip(params, grads)), adam)

    if test_motions is not None:
        crops = [crop(np.asarray(m), config.crop_length, rng) for m in test_motions]
        clf.held_out_accuracy = recognition_accuracy(clf, np.stack(crops), test_labels)
    return clf


def save_classifier(path, clf: MotionClassifier, meta: dict | None = None) -> None:
    tensors = {f"param.{k}": p.data for k, p in clf.parameters().items()}
    tensors["norm.mean"] = clf._mean
    tensors["norm.std"] = clf._std
    m = dict(meta or {})
    m.update({"format": "liemotion-classifier", "config": asdict(clf.config),
              "action_count": clf.action_count, "root_index": clf.root_index,
              "held_out_accuracy": clf.held_out_accuracy})
    core.save_checkpoint(path, tensors, m)


def load_classifier(path) -> MotionClassifier:
    tensors, meta = core.load_checkpoint(path)
    if meta.get("format") != "liemotion-classifier":
        raise core.CheckpointError("checkpoint does not hold a classifier")
    cfg = ClassifierConfig(**meta["config"])
    mean = tensors["norm.mean"]
    clf = MotionClassifier(mean.size, int(meta["action_count"]), cfg, int(meta["root_index"]))
    for k, p in clf.parameters().items():
        p.data[...] = tensors[f"param.{k}"]
    clf.set_normalization(mean, tensors["norm.std"])
    clf.held_out_accuracy = meta.get("held_out_accuracy")
    return clf
