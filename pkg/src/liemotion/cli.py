"""Command-line entry point: synth, train, generate, evaluate, convert, render.

Exit codes: 0 success, 1 invalid input, 2 runtime failure (e.g. training
divergence), 3 I/O failure. Every artifact records the seed and a hash of
the effective configuration; nothing depends on wall-clock time, so reruns
with the same inputs produce identical bytes.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import core, training, vae
from .core.checkpoint import CheckpointError, canonical_json
from .data import formats, preprocess as prep, synthetic
from .evaluation import classifier as clf_mod, report as report_mod
from .kinematics import (JointPose, Skeleton, fk_arrays, inverse_kinematics, measure_bone_lengths,
                         scale_skeleton)

OUTPUT_ROOT_ENV = "LIEMOTION_OUTPUT_ROOT"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3
BONE_TOL = 1e-6

DESK_VAE = {"latent_dim": 16, "hidden_dim": 64, "encoder_out": 64, "lambda_kl": 0.1,
            "teacher_forcing_rate": 0.6, "sequence_length": 24, "generator_gru_layers": 2}
DESK_TRAIN = {"iterations": 3000, "batch_size": 16, "lr": 1e-3}


class UsageError(ValueError):
    pass


def out_dir(arg: str | None, command: str) -> Path:
    base = Path(os.environ.get(OUTPUT_ROOT_ENV, "liemotion_out"))
    if arg is None:
        return base / command
    p = Path(arg)
    return p if p.is_absolute() or OUTPUT_ROOT_ENV not in os.environ else base / p


def _hash(obj) -> str:
    return vae.config_hash(obj)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


# ----------------------------------------------------------------------------
# synth
# ----------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.n_per_action < 1:
        raise UsageError("--n-per-action must be at least 1")
    skeleton = formats.load_skeleton(args.skeleton) if args.skeleton else formats.default_skeleton()
    specs = (synthetic.load_specs(_require_file(args.spec_file, "spec file")) if args.spec_file
             else synthetic.default_action_specs())
    cfg = {"command": "synth", "seed": args.seed, "n_per_action": args.n_per_action,
           "specs": [s.to_dict() for s in specs], "skeleton": formats.skeleton_to_text(skeleton)}
    manifest = synthetic.synthesize_dataset(specs, args.n_per_action, skeleton,
                                            np.random.default_rng(args.seed))
    tag = {"seed": args.seed, "config_hash": _hash(cfg)}
    manifest.meta.update(tag)
    for rec in manifest.records:
        rec.meta.update(tag)
    dest = out_dir(args.out_dir, "synth")
    path = formats.save_manifest(manifest, dest)
    print(f"wrote {len(manifest.records)} motions to {path}")
    for i, name in enumerate(manifest.actions):
        recs = [r for r in manifest.records if r.action_id == i]
        lengths = [r.length for r in recs]
        n_test = sum(1 for r, s in zip(manifest.records, manifest.splits)
                     if r.action_id == i and s == "test")
        print(f"  {name}: {len(recs)} motions ({len(recs) - n_test} train / {n_test} test), "
              f"frames {min(lengths)}-{max(lengths)}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# train
# ----------------------------------------------------------------------------

def load_run_config(path: str | None) -> tuple[dict, dict]:
    vae_over, train_over = dict(DESK_VAE), dict(DESK_TRAIN)
    if path:
        try:
            doc = json.loads(_require_file(path, "config file").read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from None
        unknown = set(doc) - {"vae", "train"}
        if unknown:
            raise UsageError(f"unknown config sections: {sorted(unknown)}")
        vae_over.update(doc.get("vae", {}))
        train_over.update(doc.get("train", {}))
    return vae_over, train_over


def cmd_train(args) -> int:
    manifest_path = _require_file(args.manifest, "manifest")
    manifest = formats.load_manifest(manifest_path)
    dataset = prep.preprocess(manifest)
    dest = out_dir(args.out_dir, "train")

    if args.resume:
        state = vae.load_training_state(_require_file(args.resume, "checkpoint"))
        vae_cfg = state.model.config
        train_cfg = training.TrainConfig.from_dict(state.meta["train_config"])
        if args.iterations is not None:
            train_cfg = replace(train_cfg, iterations=args.iterations)
    else:
        vae_over, train_over = load_run_config(args.config)
        if args.seed is not None:
            train_over["seed"] = args.seed
        if args.iterations is not None:
            train_over["iterations"] = args.iterations
        sk = dataset.skeleton
        try:
            vae_cfg = vae.VaeConfig(pose_dim=3 * sk.joint_count, action_count=len(dataset.actions),
                                    bone_count=sk.bone_count, **vae_over)
            train_cfg = training.TrainConfig.from_dict(train_over)
        except TypeError as exc:
            raise UsageError(f"bad config: {exc}") from None
        state = training.init_training(vae_cfg, train_cfg, dataset)

    run = {"vae": vae_cfg.to_dict(), "train": train_cfg.to_dict(),
           "manifest_hash": _hash(json.loads(manifest_path.read_text()))}
    tag = _hash(run)
    state.meta.update({"seed": train_cfg.seed, "config_hash": tag, "actions": dataset.actions,
                       "train_config": train_cfg.to_dict(),
                       "fps": float(manifest.records[0].fps)})
    dest.mkdir(parents=True, exist_ok=True)
    log_path = dest / "train_log.jsonl"
    mode = "a" if args.resume else "w"
    with log_path.open(mode) as log:
        header = {"event": "start", "seed": train_cfg.seed, "config_hash": tag,
                  "lambda_kl": vae_cfg.lambda_kl, "teacher_forcing_rate": vae_cfg.teacher_forcing_rate,
                  "lr": train_cfg.lr, "beta1": train_cfg.beta1, "beta2": train_cfg.beta2,
                  "start_iteration": state.iteration, "vae": vae_cfg.to_dict(),
                  "train": train_cfg.to_dict()}
        log.write(json.dumps(header, sort_keys=True) + "\n")

        def on_log(rec):
            log.write(json.dumps(rec, sort_keys=True) + "\n")
            log.flush()

        def on_checkpoint(st):
            vae.save_training_state(dest / f"checkpoint_{st.iteration:06d}.ckpt", st)

        try:
            training.train(state, dataset, train_cfg, on_log=on_log, on_checkpoint=on_checkpoint)
        except vae.TrainingDivergence as exc:
            log.write(json.dumps({"event": "diverged", "iteration": state.iteration + 1,
                                  "error": str(exc)}, sort_keys=True) + "\n")
            _write_json(dest / "divergence.json", exc.snapshot)
            raise
        log.write(json.dumps({"event": "done", "iteration": state.iteration}, sort_keys=True) + "\n")
    vae.save_training_state(dest / "final.ckpt", state)
    print(f"trained {state.iteration} iterations; final checkpoint {dest / 'final.ckpt'}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# generate
# ----------------------------------------------------------------------------

def _bone_scale(arg: str | None, skeleton: Skeleton) -> np.ndarray | None:
    if not arg:
        return None
    try:
        vals = [float(v) for v in arg.split(",")]
    except ValueError:
        raise UsageError("--bone-scale takes one number or one per bone, comma separated") from None
    if len(vals) == 1:
        vals = vals * skeleton.bone_count
    if len(vals) != skeleton.bone_count:
        raise UsageError(f"--bone-scale needs 1 or {skeleton.bone_count} values")
    return np.array(vals)


def cmd_generate(args) -> int:
    state = vae.load_training_state(_require_file(args.checkpoint, "checkpoint"))
    model = state.model
    actions = list(state.meta.get("actions", []))
    if args.action not in actions:
        raise UsageError(f"unknown action {args.action!r}; vocabulary: {', '.join(actions)}")
    if args.count < 1 or args.length < 1:
        raise UsageError("--count and --length must be at least 1")
    skeleton = formats.load_skeleton(args.skeleton) if args.skeleton else model.skeleton
    if skeleton.bone_count != model.skeleton.bone_count:
        raise UsageError("skeleton does not match the model's bone count")
    factors = _bone_scale(args.bone_scale, skeleton)
    if factors is not None:
        skeleton = scale_skeleton(skeleton, factors)

    cfg = {"command": "generate", "checkpoint_hash": _hash(state.meta.get("config_hash")),
           "iteration": state.iteration, "action": args.action, "count": args.count,
           "length": args.length, "seed": args.seed,
           "skeleton": formats.skeleton_to_text(skeleton)}
    tag = {"seed": args.seed, "config_hash": _hash(cfg)}
    a = actions.index(args.action)
    # the network never sees bone lengths, so its Lie output does not depend
    # on the skeleton passed here; only FK does
    motion = vae.generate(model, [a] * args.count, args.length, np.random.default_rng(args.seed),
                          skeleton=skeleton)
    dest = out_dir(args.out_dir, "generate")
    dest.mkdir(parents=True, exist_ok=True)
    fps = float(state.meta.get("fps", 12.0))
    for k in range(args.count):
        meta = dict(tag, sample=k)
        stem = f"{args.action}_{k:03d}"
        formats.save_motion(formats.MotionRecord(args.action, a, fps, motion.joints[k],
                                                 skeleton.name, meta), dest / f"{stem}.motion")
        formats.save_motion(formats.LieMotionRecord(args.action, a, fps, motion.omega[k],
                                                    motion.root[k], skeleton.name, meta),
                            dest / f"{stem}.lie.motion")
    print(f"wrote {args.count} motions of {args.length} frames to {dest}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# evaluate
# ----------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    state = vae.load_training_state(_require_file(args.checkpoint, "checkpoint"))
    manifest_path = _require_file(args.manifest, "manifest")
    dataset = prep.preprocess(formats.load_manifest(manifest_path))
    if list(dataset.actions) != list(state.meta.get("actions", dataset.actions)):
        raise UsageError("manifest action vocabulary differs from the model's")
    dest = out_dir(args.out_dir, "evaluate")
    dest.mkdir(parents=True, exist_ok=True)
    train = dataset.split("train")
    test = dataset.split("test")
    if not test:
        raise UsageError("manifest has no test split")
    eval_rng, clf_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(args.seed).spawn(2))

    if args.classifier:
        clf = clf_mod.load_classifier(_require_file(args.classifier, "classifier checkpoint"))
    else:
        clf = clf_mod.train_classifier([m.joints for m in train], [m.action_id for m in train],
                                       len(dataset.actions), dataset.skeleton.root_index, clf_rng,
                                       test_motions=[m.joints for m in test],
                                       test_labels=[m.action_id for m in test])
        clf_mod.save_classifier(dest / "classifier.ckpt", clf, {"seed": args.seed})

    ecfg = report_mod.EvalConfig(n_samples=args.n_samples, diversity_size=args.diversity_size,
                                 multimodality_size=args.multimodality_size,
                                 repetitions=args.repetitions, length=args.length)
    cfg = {"command": "evaluate", "checkpoint_hash": state.meta.get("config_hash"),
           "iteration": state.iteration, "manifest_hash": _hash(json.loads(manifest_path.read_text())),
           "eval": ecfg.__dict__, "classifier": args.classifier is not None, "seed": args.seed}
    rep = report_mod.evaluate_model(state.model, [m.joints for m in test],
                                    [m.action_id for m in test], clf, eval_rng, ecfg, args.seed)
    rep["config_hash"] = _hash(cfg)
    rep["actions"] = dataset.actions
    _write_json(dest / "report.json", rep)
    for r in rep["records"]:
        print(f"{r['source']:9s} {r['name']:14s} {r['value']:.4f} +/- {r['ci95']:.4f}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# convert
# ----------------------------------------------------------------------------

def cmd_convert(args) -> int:
    src = _require_file(args.input, "motion file")
    skeleton = formats.load_skeleton(args.skeleton) if args.skeleton else formats.default_skeleton()
    kind = formats.motion_kind(src)
    dest = out_dir(args.out_dir, "convert")
    stem = src.name.split(".")[0]
    cfg = {"command": "convert", "direction": args.direction,
           "skeleton": formats.skeleton_to_text(skeleton), "input": src.read_text()}
    if args.direction == "joints2lie":
        if kind != "joints":
            raise UsageError(f"{src} holds {kind} data, expected joints")
        rec = formats.load_motion(src)
        _check_skeleton(rec.skeleton_ref, skeleton, rec.frames.shape[1], skeleton.joint_count)
        lengths = measure_bone_lengths(rec.frames, skeleton)
        err = np.abs(lengths - skeleton.bone_lengths).max()
        if err > BONE_TOL:
            raise UsageError(f"motion bone lengths differ from skeleton {skeleton.name!r} "
                             f"by up to {err:.3g} m")
        lie = inverse_kinematics(JointPose(rec.frames), skeleton)
        out = formats.LieMotionRecord(rec.action, rec.action_id, rec.fps, lie.omega,
                                      lie.root_translation, skeleton.name,
                                      dict(rec.meta, config_hash=_hash(cfg)))
        path = dest / f"{stem}.lie.motion"
    else:
        if kind != "lie":
            raise UsageError(f"{src} holds {kind} data, expected lie")
        rec = formats.load_lie_motion(src)
        _check_skeleton(rec.skeleton_ref, skeleton, rec.omega.shape[1], skeleton.bone_count)
        joints, _, _ = fk_arrays(rec.omega, rec.root, skeleton)
        out = formats.MotionRecord(rec.action, rec.action_id, rec.fps, joints, skeleton.name,
                                   dict(rec.meta, config_hash=_hash(cfg)))
        path = dest / f"{stem}.motion"
    dest.mkdir(parents=True, exist_ok=True)
    formats.save_motion(out, path)
    print(f"wrote {path}")
    return EXIT_OK


def _check_skeleton(ref: str, skeleton: Skeleton, have: int, want: int):
    if ref != skeleton.name:
        raise UsageError(f"motion refers to skeleton {ref!r}, got {skeleton.name!r}")
    if have != want:
        raise UsageError(f"motion has {have} entries per frame, skeleton expects {want}")


# ----------------------------------------------------------------------------
# render
# ----------------------------------------------------------------------------

PANEL = 160


def render_svg(frames: np.ndarray, skeleton: Skeleton, every: int, view: str = "front",
               title: str = "") -> str:
    """Orthographic strip of every ``every``-th frame; y is up."""
    horiz = {"front": 0, "side": 2}[view]
    picked = frames[::every]
    pts = picked[..., [horiz, 1]]
    lo = pts.reshape(-1, 2).min(axis=0)
    hi = pts.reshape(-1, 2).max(axis=0)
    span = max(float((hi - lo).max()), 1e-9)
    s = (PANEL - 20) / span
    width = PANEL * len(picked)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL + 20}" '
           f'viewBox="0 0 {width} {PANEL + 20}">']
    if title:
        out.append(f"<!-- {title} -->")
    out.append(f'<rect width="{width}" height="{PANEL + 20}" fill="white"/>')
    for k, f in enumerate(picked):
        ox = PANEL * k + 10
        out.append(f'<g transform="translate({ox},10)">')
        out.append(f'<rect x="-5" y="-5" width="{PANEL - 10}" height="{PANEL - 10}" '
                   f'fill="none" stroke="#ccc"/>')
        for a, b in skeleton.bones:
            x1, y1 = (f[a, horiz] - lo[0]) * s, (hi[1] - f[a, 1]) * s
            x2, y2 = (f[b, horiz] - lo[0]) * s, (hi[1] - f[b, 1]) * s
            out.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                       f'stroke="black" stroke-width="2"/>')
        out.append(f'<text x="0" y="{PANEL}" font-size="10">frame {k * every}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_render(args) -> int:
    src = _require_file(args.input, "motion file")
    if args.every < 1:
        raise UsageError("--every must be at least 1")
    skeleton = formats.load_skeleton(args.skeleton) if args.skeleton else formats.default_skeleton()
    kind = formats.motion_kind(src)
    if kind == "lie":
        rec = formats.load_lie_motion(src, skeleton.bone_count)
        frames, _, _ = fk_arrays(rec.omega, rec.root, skeleton)
    else:
        frames = formats.load_motion(src, skeleton.joint_count).frames
    if frames.shape[0] == 0:
        raise UsageError("motion has no frames")
    cfg = {"command": "render", "every": args.every, "view": args.view, "input": src.read_text()}
    svg = render_svg(frames, skeleton, args.every, args.view,
                     f"{src.name} config_hash={_hash(cfg)}")
    dest = out_dir(args.out_dir, "render")
    dest.mkdir(parents=True, exist_ok=True)
    path = dest / (src.name.split(".")[0] + ".svg")
    path.write_text(svg)
    print(f"wrote {path} ({len(frames[::args.every])} panels)")
    return EXIT_OK


# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liemotion", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a procedural motion dataset")
    s.add_argument("--out-dir")
    s.add_argument("--spec-file", help="JSON list of action specs (default catalog if omitted)")
    s.add_argument("--skeleton", help="skeleton file (default: shipped 21-joint skeleton)")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--n-per-action", type=int, default=50)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train the VAE on a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", help="JSON file with optional 'vae' and 'train' sections")
    s.add_argument("--out-dir")
    s.add_argument("--seed", type=int)
    s.add_argument("--iterations", type=int)
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="sample motions for one action")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--action", required=True)
    s.add_argument("--count", type=int, default=5)
    s.add_argument("--length", type=int, default=60)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--skeleton")
    s.add_argument("--bone-scale", help="one factor, or one per bone, comma separated")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="FID, accuracy, diversity and multimodality report")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--classifier")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--repetitions", type=int, default=20)
    s.add_argument("--n-samples", type=int, default=300)
    s.add_argument("--diversity-size", type=int, default=50)
    s.add_argument("--multimodality-size", type=int, default=10)
    s.add_argument("--length", type=int)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("convert", help="joints <-> Lie parameters")
    s.add_argument("--input", required=True)
    s.add_argument("--direction", required=True, choices=["joints2lie", "lie2joints"])
    s.add_argument("--skeleton")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("render", help="SVG strip of a motion")
    s.add_argument("--input", required=True)
    s.add_argument("--every", type=int, default=10)
    s.add_argument("--view", choices=["front", "side"], default="front")
    s.add_argument("--skeleton")
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except vae.TrainingDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
