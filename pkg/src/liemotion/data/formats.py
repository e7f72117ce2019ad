"""Plain-text skeleton and motion files plus the JSON dataset manifest.

Skeleton file::

    # liemotion skeleton
    schema_version 1
    name default21
    root 0
    joint 0 pelvis
    ...
    chain spine 0 1 2 3 4
    ...
    bone 0 1 0.12          # parent child length (meters)

Motion file: ``key value`` header lines, a ``data`` line, then one line per
frame of space-separated floats. ``kind joints`` frames hold J*3 joint
coordinates; ``kind lie`` frames hold the root translation followed by N*3
axis-angle values. Floats use the shortest round-trip rendering, so a
save/load cycle is value-exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..kinematics import KinematicsError, Skeleton

SCHEMA_VERSION = 1
SKELETON_MAGIC = "# liemotion skeleton"
MOTION_MAGIC = "# liemotion motion"


class FormatError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path, self.line = path, line


def _fmt(x: float) -> str:
    return repr(float(x))


# ----------------------------------------------------------------------------
# skeleton
# ----------------------------------------------------------------------------


def skeleton_to_text(skeleton: Skeleton) -> str:
    lines = [SKELETON_MAGIC, f"schema_version {SCHEMA_VERSION}",
             f"name {skeleton.name}", f"root {skeleton.root_index}"]
    lines += [f"joint {i} {name}" for i, name in enumerate(skeleton.joints)]
    for cname, chain in zip(skeleton.chain_names, skeleton.chains):
        lines.append(f"chain {cname} " + " ".join(str(i) for i in chain))
    for (s, e), length in zip(skeleton.bones, skeleton.bone_lengths):
        lines.append(f"bone {s} {e} {_fmt(length)}")
    return "\n".join(lines) + "\n"


def parse_skeleton(text: str, path=None) -> Skeleton:
    lines = text.splitlines()
    if not lines or lines[0].strip() != SKELETON_MAGIC:
        raise FormatError("missing skeleton header line", path, 1)
    name, root, version = None, None, None
    joints: dict[int, str] = {}
    chains, chain_names = [], []
    lengths: dict[tuple[int, int], float] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *fields = line.split()
        try:
            if key == "schema_version":
                version = int(fields[0])
            elif key == "name":
                name = fields[0]
            elif key == "root":
                root = int(fields[0])
            elif key == "joint":
                idx = int(fields[0])
                if idx in joints:
                    raise FormatError(f"joint {idx} defined twice", path, lineno)
                joints[idx] = fields[1]
            elif key == "chain":
                chain_names.append(fields[0])
                chains.append([int(f) for f in fields[1:]])
                for j in chains[-1]:
                    if j not in joints:
                        raise FormatError(f"chain {fields[0]!r} references unknown joint {j}",
                                          path, lineno)
            elif key == "bone":
                s, e, length = int(fields[0]), int(fields[1]), float(fields[2])
                lengths[(s, e)] = length
            else:
                raise FormatError(f"unknown field {key!r}", path, lineno)
        except (IndexError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed {key!r} line: {raw.strip()!r}", path, lineno) from None
    if version != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {version}", path)
    if name is None or root is None:
        raise FormatError("skeleton needs 'name' and 'root' fields", path)
    if sorted(joints) != list(range(len(joints))):
        raise FormatError("joint indices must be contiguous from 0", path)
    bones = [b for c in chains for b in zip(c[:-1], c[1:])]
    missing = [b for b in bones if b not in lengths]
    if missing:
        raise FormatError(f"missing bone lengths for {missing}", path)
    extra = set(lengths) - set(bones)
    if extra:
        raise FormatError(f"bone lengths given for bones not in any chain: {sorted(extra)}", path)
    try:
        return Skeleton(tuple(joints[i] for i in range(len(joints))), chains,
                        np.array([lengths[b] for b in bones]), root, name, chain_names)
    except KinematicsError as exc:
        raise FormatError(str(exc), path) from None


def save_skeleton(skeleton: Skeleton, path) -> None:
    Path(path).write_text(skeleton_to_text(skeleton))


def load_skeleton(path) -> Skeleton:
    return parse_skeleton(Path(path).read_text(), path)


def default_skeleton() -> Skeleton:
    """The 21-joint, five-chain skeleton shipped with the package.

    Bone lengths are plausible design constants, not measured data.
    """
    text = resources.files("liemotion.data").joinpath("default21.skel").read_text()
    return parse_skeleton(text, "default21.skel")


# ----------------------------------------------------------------------------
# motions
# ----------------------------------------------------------------------------


@dataclass
class MotionRecord:
    """One labeled motion: ``frames`` (T, J, 3) in meters."""

    action: str
    action_id: int
    fps: float
    frames: np.ndarray
    skeleton_ref: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[-1] != 3 or self.frames.shape[0] < 1:
            raise FormatError(f"frames must have shape (T>=1, J, 3), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise FormatError("frames contain non-finite coordinates")
        if not self.fps > 0:
            raise FormatError("fps must be positive")

    @property
    def length(self) -> int:
        return self.frames.shape[0]


@dataclass
class LieMotionRecord:
    """Lie-parameter motion: ``omega`` (T, N, 3) and ``root`` (T, 3)."""

    action: str
    action_id: int
    fps: float
    omega: np.ndarray
    root: np.ndarray
    skeleton_ref: str
    meta: dict = field(default_factory=dict)


def _motion_text(kind: str, header: dict, rows: np.ndarray) -> str:
    lines = [MOTION_MAGIC, f"schema_version {SCHEMA_VERSION}", f"kind {kind}"]
    for key, value in header.items():
        lines.append(f"{key} {value}")
    lines.append(f"frames {rows.shape[0]}")
    lines.append(f"width {rows.shape[1]}")
    lines.append("data")
    lines += [" ".join(map(repr, row)) for row in rows.tolist()]
    return "\n".join(lines) + "\n"


def _header(rec, extra_keys=()) -> dict:
    h = {"skeleton": rec.skeleton_ref, "fps": _fmt(rec.fps),
         "action": rec.action, "action_id": rec.action_id}
    for key in sorted(rec.meta):
        if " " in str(rec.meta[key]) or "\n" in str(rec.meta[key]):
            raise FormatError(f"metadata value for {key!r} must not contain whitespace")
        h[key] = rec.meta[key]
    return h


def motion_to_text(rec: MotionRecord) -> str:
    return _motion_text("joints", _header(rec), rec.frames.reshape(rec.length, -1))


def lie_motion_to_text(rec: LieMotionRecord) -> str:
    T = rec.omega.shape[0]
    rows = np.concatenate([rec.root.reshape(T, 3), rec.omega.reshape(T, -1)], axis=1)
    return _motion_text("lie", _header(rec), rows)


_RESERVED = {"schema_version", "kind", "skeleton", "fps", "action", "action_id", "frames", "width"}


def _parse_motion(text: str, path=None):
    lines = text.splitlines()
    if not lines or lines[0].strip() != MOTION_MAGIC:
        raise FormatError("missing motion header line", path, 1)
    header: dict[str, str] = {}
    i = 1
    while i < len(lines) and lines[i].strip() != "data":
        parts = lines[i].split(None, 1)
        if len(parts) != 2:
            raise FormatError(f"malformed header line {lines[i]!r}", path, i + 1)
        header[parts[0]] = parts[1].strip()
        i += 1
    if i == len(lines):
        raise FormatError("missing 'data' line", path)
    for key in ("schema_version", "kind", "skeleton", "fps", "action", "action_id", "frames", "width"):
        if key not in header:
            raise FormatError(f"missing header field {key!r}", path)
    try:
        if int(header["schema_version"]) != SCHEMA_VERSION:
            raise FormatError(f"unsupported schema_version {header['schema_version']}", path)
        n_frames, width = int(header["frames"]), int(header["width"])
        fps, action_id = float(header["fps"]), int(header["action_id"])
    except ValueError as exc:
        raise FormatError(f"bad header value: {exc}", path) from None
    body = [ln for ln in lines[i + 1:] if ln.strip()]
    if len(body) != n_frames:
        raise FormatError(f"header says {n_frames} frames, found {len(body)}", path)
    rows = np.empty((n_frames, width))
    for k, ln in enumerate(body):
        vals = ln.split()
        if len(vals) != width:
            raise FormatError(f"frame {k} has {len(vals)} values, expected {width}",
                              path, i + 2 + k)
        try:
            rows[k] = [float(v) for v in vals]
        except ValueError:
            raise FormatError(f"frame {k} has a non-numeric value", path, i + 2 + k) from None
    meta = {k: v for k, v in header.items() if k not in _RESERVED}
    return header, fps, action_id, rows, meta


def parse_motion(text: str, path=None, joint_count: int | None = None) -> MotionRecord:
    header, fps, action_id, rows, meta = _parse_motion(text, path)
    if header["kind"] != "joints":
        raise FormatError(f"expected a joints motion, got kind {header['kind']!r}", path)
    if rows.shape[1] % 3:
        raise FormatError("joint motion width must be a multiple of 3", path)
    if joint_count is not None and rows.shape[1] != 3 * joint_count:
        raise FormatError(f"frames have {rows.shape[1] // 3} joints, skeleton has {joint_count}", path)
    return MotionRecord(header["action"], action_id, fps, rows.reshape(len(rows), -1, 3),
                        header["skeleton"], meta)


def parse_lie_motion(text: str, path=None, bone_count: int | None = None) -> LieMotionRecord:
    header, fps, action_id, rows, meta = _parse_motion(text, path)
    if header["kind"] != "lie":
        raise FormatError(f"expected a lie motion, got kind {header['kind']!r}", path)
    if rows.shape[1] < 3 or rows.shape[1] % 3:
        raise FormatError("lie motion width must be 3 + 3N", path)
    if bone_count is not None and rows.shape[1] != 3 + 3 * bone_count:
        raise FormatError(f"frames have {rows.shape[1] // 3 - 1} bones, skeleton has {bone_count}", path)
    T = len(rows)
    return LieMotionRecord(header["action"], action_id, fps, rows[:, 3:].reshape(T, -1, 3),
                           rows[:, :3].copy(), header["skeleton"], meta)


def motion_kind(path) -> str:
    for line in Path(path).read_text().splitlines()[:12]:
        if line.startswith("kind "):
            return line.split()[1]
    raise FormatError("no 'kind' header", path)


def save_motion(rec: MotionRecord | LieMotionRecord, path) -> None:
    text = lie_motion_to_text(rec) if isinstance(rec, LieMotionRecord) else motion_to_text(rec)
    Path(path).write_text(text)


def load_motion(path, joint_count: int | None = None) -> MotionRecord:
    return parse_motion(Path(path).read_text(), path, joint_count)


def load_lie_motion(path, bone_count: int | None = None) -> LieMotionRecord:
    return parse_lie_motion(Path(path).read_text(), path, bone_count)


# ----------------------------------------------------------------------------
# manifest
# ----------------------------------------------------------------------------


@dataclass
class DatasetManifest:
    skeleton: Skeleton
    actions: list[str]
    records: list[MotionRecord]
    splits: list[str]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.records) != len(self.splits):
            raise FormatError("one split entry per record")
        for rec, split in zip(self.records, self.splits):
            if split not in ("train", "test"):
                raise FormatError(f"unknown split {split!r}")
            if rec.action not in self.actions or self.actions.index(rec.action) != rec.action_id:
                raise FormatError(f"record action {rec.action!r}/{rec.action_id} not in vocabulary")
            if rec.frames.shape[1] != self.skeleton.joint_count:
                raise FormatError(f"record has {rec.frames.shape[1]} joints, "
                                  f"skeleton has {self.skeleton.joint_count}")

    def subset(self, split: str) -> list[MotionRecord]:
        return [r for r, s in zip(self.records, self.splits) if s == split]


def save_manifest(manifest: DatasetManifest, out_dir, motion_dir: str = "motions") -> Path:
    out = Path(out_dir)
    (out / motion_dir).mkdir(parents=True, exist_ok=True)
    save_skeleton(manifest.skeleton, out / "skeleton.skel")
    entries = []
    counters: dict[str, int] = {}
    for rec, split in zip(manifest.records, manifest.splits):
        k = counters.get(rec.action, 0)
        counters[rec.action] = k + 1
        rel = f"{motion_dir}/{rec.action}_{k:04d}.motion"
        save_motion(rec, out / rel)
        entries.append({"path": rel, "action": rec.action, "split": split})
    doc = {"schema_version": SCHEMA_VERSION, "skeleton": "skeleton.skel",
           "actions": list(manifest.actions), "records": entries, "meta": manifest.meta}
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}", path) from None
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported manifest schema {doc.get('schema_version')}", path)
    root = path.parent
    skeleton = load_skeleton(root / doc["skeleton"])
    records, splits = [], []
    for entry in doc["records"]:
        rec = load_motion(root / entry["path"], skeleton.joint_count)
        if rec.action != entry["action"]:
            raise FormatError(f"{entry['path']}: action {rec.action!r} differs from manifest "
                              f"entry {entry['action']!r}", path)
        records.append(rec)
        splits.append(entry["split"])
    return DatasetManifest(skeleton, list(doc["actions"]), records, splits, doc.get("meta", {}))
