"""Repeated-sampling evaluation of a trained model with confidence intervals."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..data.preprocess import crop
from ..vae import VaeModel, generate
from . import metrics
from .classifier import MotionClassifier, extract_features

METRICS = ("fid", "fid_per_class", "accuracy", "diversity", "multimodality")
Z95 = 1.959963984540054


@dataclass(frozen=True)
class EvalConfig:
    n_samples: int = 300
    diversity_size: int = 50
    multimodality_size: int = 10
    repetitions: int = 20
    length: int | None = None  # defaults to the model's sequence length


def confidence_interval(values) -> tuple[float, float]:
    """Mean and 95% half-width (normal approximation, sample std)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(Z95 * v.std(ddof=1) / np.sqrt(v.size))


def _score(feats, labels, real_feats, real_labels, clf, cfg, rng, C) -> dict:
    pred = np.argmax(clf.head.weight.data @ feats.T + clf.head.bias.data.T, axis=0)
    return {
        "fid": metrics.feature_fid(feats, real_feats),
        "fid_per_class": metrics.class_matched_fid(feats, labels, real_feats, real_labels),
        "accuracy": float(np.mean(pred == labels)),
        "diversity": metrics.diversity(feats, cfg.diversity_size, rng),
        "multimodality": metrics.multimodality(feats, labels, cfg.multimodality_size, rng, C),
    }


def _real_draw(real_motions, real_labels, n, length, rng):
    idx = rng.integers(0, len(real_motions), size=n)
    joints = np.stack([crop(np.asarray(real_motions[i]), length, rng) for i in idx])
    return joints, np.asarray(real_labels)[idx]


def evaluate_model(model: VaeModel | None, real_motions, real_labels,
                   classifier: MotionClassifier, rng: np.random.Generator,
                   config: EvalConfig | None = None, seed: int | None = None) -> dict:
    """Score generated motions (and a real-motion reference) ``repetitions`` times.

    Real motions are drawn with replacement from ``real_motions`` and cropped
    to the generation length. In each repetition the generated set is
    compared with one real draw and the reference row compares a second,
    independent real draw with the first. With ``model=None`` only the
    reference row is produced.
    """
    cfg = config or EvalConfig()
    C = classifier.action_count
    length = cfg.length or (model.config.sequence_length if model is not None else None)
    if length is None:
        raise ValueError("evaluation length is required when no model is given")
    rows = {"generated": [], "real": []}
    for _ in range(cfg.repetitions):
        real_a, lab_a = _real_draw(real_motions, real_labels, cfg.n_samples, length, rng)
        feats_a = extract_features(classifier, real_a)
        real_b, lab_b = _real_draw(real_motions, real_labels, cfg.n_samples, length, rng)
        feats_b = extract_features(classifier, real_b)
        rows["real"].append(_score(feats_b, lab_b, feats_a, lab_a, classifier, cfg, rng, C))
        if model is not None:
            labels = rng.integers(0, C, size=cfg.n_samples)
            gen = generate(model, labels, length, rng)
            feats = extract_features(classifier, gen.joints)
            rows["generated"].append(_score(feats, labels, feats_a, lab_a, classifier, cfg, rng, C))

    records = []
    for source in ("generated", "real"):
        for name in METRICS:
            vals = [r[name] for r in rows[source]]
            if not vals:
                continue
            mean, half = confidence_interval(vals)
            records.append({"source": source, "name": name, "value": mean, "ci95": half,
                            "n": cfg.n_samples, "repetitions": len(vals), "seed": seed})
    return {"config": asdict(cfg), "length": length, "seed": seed,
            "classifier_held_out_accuracy": classifier.held_out_accuracy,
            "records": records}


def record(report: dict, source: str, name: str) -> dict:
    for r in report["records"]:
        if r["source"] == source and r["name"] == name:
            return r
    raise KeyError((source, name))
