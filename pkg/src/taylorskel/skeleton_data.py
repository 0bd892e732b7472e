"""Skeleton sequence ingestion, preprocessing, splitting and synthetic data.

JSON sequence schema (one document per sequence)::

    {
      "frames": [[[[x, y, z], ...V joints], ...M bodies], ...T frames],
      "label": int, "subject_id": int, "camera_id": int, "setup_id": int,
      "source_id": str            # optional
    }

``frames`` may list fewer than two bodies; missing bodies are zero-padded.

Manifest schema::

    {
      "num_classes": int,
      "split_rule": "cross_subject" | "cross_view" | "cross_setup",
      "train_ids": [int, ...], "test_ids": [int, ...],
      "sequences": ["relative/path.json", ...],
      "class_names": [str, ...]   # optional
    }
"""

import json
import os
import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import ntu

MAX_BODIES = 2
SPLIT_RULES = ("cross_subject", "cross_view", "cross_setup")
_SPLIT_FIELD = {"cross_subject": "subject_id", "cross_view": "camera_id", "cross_setup": "setup_id"}
_NTU_NAME = re.compile(r"S(\d{3})C(\d{3})P(\d{3})R(\d{3})A(\d{3})")


class SkeletonFormatError(ValueError):
    """Malformed skeleton file or JSON document."""


class TopologyMismatchError(SkeletonFormatError):
    """Joint count differs from the declared topology."""


class UnassignedSequenceError(ValueError):
    """A sequence's split id is in neither the train nor the test set."""


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    frames: np.ndarray  # T x M x V x C
    label: int = 0
    subject_id: int = 0
    camera_id: int = 0
    setup_id: int = 0
    source_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float64)
        if arr.ndim != 4:
            raise SkeletonFormatError(f"frames must be T x M x V x C, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise SkeletonFormatError("sequence has no frames")
        if not np.all(np.isfinite(arr)):
            t, m, v, c = np.argwhere(~np.isfinite(arr))[0]
            raise SkeletonFormatError(f"non-finite coordinate at frame {t}, body {m}, joint {v}")
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def joint_count(self):
        return self.frames.shape[2]

    def with_frames(self, frames):
        return replace(self, frames=frames)


@dataclass
class DatasetManifest:
    sequences: list
    num_classes: int
    split_rule: str = "cross_subject"
    train_ids: set = field(default_factory=set)
    test_ids: set = field(default_factory=set)
    class_names: list = None

    def __post_init__(self):
        if self.split_rule not in SPLIT_RULES:
            raise ValueError(f"unknown split rule {self.split_rule!r}")
        self.train_ids = set(self.train_ids)
        self.test_ids = set(self.test_ids)
        overlap = self.train_ids & self.test_ids
        if overlap:
            raise ValueError(f"ids in both train and test: {sorted(overlap)}")
        for seq in self.sequences:
            if not 0 <= seq.label < self.num_classes:
                raise ValueError(f"label {seq.label} outside [0, {self.num_classes})")


@dataclass(frozen=True)
class PreprocessConfig:
    target_frames: int = 64
    center_joint: int = ntu.ROOT_JOINT
    scale_normalize: bool = False

    def __post_init__(self):
        if self.target_frames < 2:
            raise ValueError("target_frames must be >= 2")


# ------------------------------------------------------------------ NTU files


def parse_ntu_filename(name):
    """Decode an ``SsssCcccPpppRrrrAaaa`` stem into metadata (label is 0-based)."""
    m = _NTU_NAME.search(os.path.basename(name))
    if not m:
        raise SkeletonFormatError(f"filename {name!r} does not match SsssCcccPpppRrrrAaaa")
    setup, camera, subject, repetition, action = (int(g) for g in m.groups())
    return {
        "setup_id": setup,
        "camera_id": camera,
        "subject_id": subject,
        "repetition": repetition,
        "label": action - 1,
        "source_id": m.group(0),
    }


def parse_ntu_skeleton_file(data, meta=None):
    """Parse the NTU ``.skeleton`` text format.

    ``meta`` is either a filename (decoded with :func:`parse_ntu_filename`) or
    a dict of metadata fields. Bodies beyond the first two are dropped; fewer
    bodies are zero-padded.
    """
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("ascii", errors="replace")
    if isinstance(meta, str):
        meta = parse_ntu_filename(meta)
    meta = dict(meta or {})
    meta.pop("repetition", None)

    lines = data.splitlines(keepends=True)
    offsets = np.cumsum([0] + [len(ln) for ln in lines])
    pos = 0

    def next_line(what):
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise SkeletonFormatError(f"truncated stream at byte offset {offsets[-1]}: expected {what}")
        pos += 1
        return pos, lines[pos - 1].split()

    def read_int(what):
        lineno, toks = next_line(what)
        try:
            return int(toks[0])
        except (ValueError, IndexError):
            raise SkeletonFormatError(f"line {lineno}: expected integer {what}, got {' '.join(toks)!r}")

    num_frames = read_int("frame count")
    frames = np.zeros((num_frames, MAX_BODIES, ntu.NUM_JOINTS, 3))
    for t in range(num_frames):
        try:
            num_bodies = read_int(f"body count of frame {t + 1}")
        except SkeletonFormatError as exc:
            raise SkeletonFormatError(f"frame {t + 1}: {exc}") from None
        for b in range(num_bodies):
            next_line(f"body info of frame {t + 1}")
            joints = read_int(f"joint count of frame {t + 1}")
            if joints != ntu.NUM_JOINTS:
                raise TopologyMismatchError(
                    f"frame {t + 1}, body {b + 1}: {joints} joints, expected {ntu.NUM_JOINTS}"
                )
            for j in range(joints):
                lineno, toks = next_line(f"joint {j + 1} of frame {t + 1}")
                try:
                    xyz = [float(tok) for tok in toks[:3]]
                except ValueError:
                    raise SkeletonFormatError(f"line {lineno}: non-numeric coordinate in {' '.join(toks[:3])!r}")
                if len(xyz) < 3:
                    raise SkeletonFormatError(f"line {lineno}: expected 3 coordinates")
                if not all(np.isfinite(xyz)):
                    raise SkeletonFormatError(f"line {lineno}: non-finite coordinate")
                if b < MAX_BODIES:
                    frames[t, b, j] = xyz
    return SkeletonSequence(frames=frames, **meta)


# ------------------------------------------------------------------ JSON


def _pad_bodies(frames):
    t, m = frames.shape[:2]
    if m >= MAX_BODIES:
        return frames
    pad = np.zeros((t, MAX_BODIES - m) + frames.shape[2:])
    return np.concatenate([frames, pad], axis=1)


def sequence_to_dict(seq):
    return {
        "frames": seq.frames.tolist(),
        "label": int(seq.label),
        "subject_id": int(seq.subject_id),
        "camera_id": int(seq.camera_id),
        "setup_id": int(seq.setup_id),
        "source_id": seq.source_id,
    }


def dump_json_sequence(seq):
    return json.dumps(sequence_to_dict(seq))


def sequence_from_dict(doc):
    if not isinstance(doc, dict):
        raise SkeletonFormatError("sequence document must be a JSON object")
    for key in ("frames", "label", "subject_id", "camera_id", "setup_id"):
        if key not in doc:
            raise SkeletonFormatError(f"missing field {key!r}")
    for key in ("label", "subject_id", "camera_id", "setup_id"):
        if not isinstance(doc[key], int) or isinstance(doc[key], bool):
            raise SkeletonFormatError(f"field {key!r} must be an integer")
    try:
        frames = np.array(doc["frames"], dtype=np.float64)
    except (ValueError, TypeError):
        raise SkeletonFormatError("field 'frames' must be a rectangular numeric array") from None
    if frames.ndim != 4:
        raise SkeletonFormatError(f"field 'frames' must be T x M x V x C, got {frames.ndim} dims")
    source = doc.get("source_id", "")
    if not isinstance(source, str):
        raise SkeletonFormatError("field 'source_id' must be a string")
    return SkeletonSequence(
        frames=_pad_bodies(frames),
        label=doc["label"],
        subject_id=doc["subject_id"],
        camera_id=doc["camera_id"],
        setup_id=doc["setup_id"],
        source_id=source,
    )


def load_json_sequence(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SkeletonFormatError(f"invalid JSON: {exc}") from None
    return sequence_from_dict(doc)


def read_sequence(path):
    with open(path) as fh:
        return load_json_sequence(fh.read())


def write_sequence(path, seq):
    with open(path, "w") as fh:
        fh.write(dump_json_sequence(seq))


# ------------------------------------------------------------------ preprocessing


def resize_sequence(seq, target_frames):
    """Linearly resample along time to exactly ``target_frames`` frames."""
    if target_frames < 2:
        raise ValueError("target_frames must be >= 2")
    t = seq.num_frames
    if t == target_frames:
        return seq
    if t == 1:
        return seq.with_frames(np.repeat(seq.frames, target_frames, axis=0))
    pos = np.linspace(0.0, t - 1, target_frames)
    lo = np.floor(pos).astype(int)
    lo = np.minimum(lo, t - 2)
    w = (pos - lo)[:, None, None, None]
    a, b = seq.frames[lo], seq.frames[lo + 1]
    # interpolate from the nearer endpoint: exact at both ends, never overshoots
    out = np.where(w <= 0.5, a + w * (b - a), b - (1.0 - w) * (b - a))
    return seq.with_frames(out)


def center_sequence(seq, root=ntu.ROOT_JOINT):
    """Subtract the first frame's root-joint position of each present body."""
    frames = seq.frames.copy()
    for m in range(frames.shape[1]):
        if np.any(frames[:, m]):
            frames[:, m] -= frames[0, m, root]
    return seq.with_frames(frames)


def preprocess(seq, cfg):
    if cfg.scale_normalize:
        seq = center_sequence(seq, cfg.center_joint)
    return resize_sequence(seq, cfg.target_frames)


# ------------------------------------------------------------------ splits


def split_dataset(manifest):
    attr = _SPLIT_FIELD[manifest.split_rule]
    train, test = [], []
    for seq in manifest.sequences:
        key = getattr(seq, attr)
        if key in manifest.train_ids:
            train.append(seq)
        elif key in manifest.test_ids:
            test.append(seq)
        else:
            raise UnassignedSequenceError(
                f"sequence {seq.source_id or '?'} has {attr} {key}, which is in neither train nor test ids"
            )
    return train, test


def save_manifest(directory, manifest, prefix="sequences"):
    """Write every sequence plus ``manifest.json`` under ``directory``."""
    os.makedirs(os.path.join(directory, prefix), exist_ok=True)
    paths = []
    for i, seq in enumerate(manifest.sequences):
        rel = f"{prefix}/{seq.source_id or f'seq{i:05d}'}.json"
        write_sequence(os.path.join(directory, rel), seq)
        paths.append(rel)
    doc = {
        "num_classes": manifest.num_classes,
        "split_rule": manifest.split_rule,
        "train_ids": sorted(manifest.train_ids),
        "test_ids": sorted(manifest.test_ids),
        "sequences": paths,
    }
    if manifest.class_names:
        doc["class_names"] = list(manifest.class_names)
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
    return path


def load_manifest(path):
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("num_classes", "split_rule", "train_ids", "test_ids", "sequences"):
        if key not in doc:
            raise SkeletonFormatError(f"manifest {path}: missing field {key!r}")
    base = os.path.dirname(os.path.abspath(path))
    seqs = [read_sequence(os.path.join(base, p)) for p in doc["sequences"]]
    return DatasetManifest(
        sequences=seqs,
        num_classes=doc["num_classes"],
        split_rule=doc["split_rule"],
        train_ids=doc["train_ids"],
        test_ids=doc["test_ids"],
        class_names=doc.get("class_names"),
    )


# ------------------------------------------------------------------ synthetic data


def rest_pose():
    """A standing 25-joint pose in meters, y up, facing -z."""
    p = np.zeros((ntu.NUM_JOINTS, 3))
    coords = {
        0: (0.0, 0.0, 0.0),
        1: (0.0, 0.28, 0.0),
        20: (0.0, 0.50, 0.0),
        2: (0.0, 0.58, 0.0),
        3: (0.0, 0.72, 0.0),
        4: (-0.18, 0.48, 0.0),
        5: (-0.22, 0.22, 0.0),
        6: (-0.24, -0.02, 0.0),
        7: (-0.25, -0.08, 0.0),
        21: (-0.26, -0.15, 0.0),
        22: (-0.22, -0.07, -0.03),
        8: (0.18, 0.48, 0.0),
        9: (0.22, 0.22, 0.0),
        10: (0.24, -0.02, 0.0),
        11: (0.25, -0.08, 0.0),
        23: (0.26, -0.15, 0.0),
        24: (0.22, -0.07, -0.03),
        12: (-0.10, -0.02, 0.0),
        13: (-0.11, -0.45, 0.0),
        14: (-0.12, -0.85, 0.0),
        15: (-0.12, -0.90, -0.10),
        16: (0.10, -0.02, 0.0),
        17: (0.11, -0.45, 0.0),
        18: (0.12, -0.85, 0.0),
        19: (0.12, -0.90, -0.10),
    }
    for j, xyz in coords.items():
        p[j] = xyz
    return p


_LEFT_ARM = (5, 6, 7, 21, 22)
_RIGHT_ARM = (9, 10, 11, 23, 24)
_LEFT_LEG = (13, 14, 15)
_RIGHT_LEG = (17, 18, 19)
_UPPER = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 20, 21, 22, 23, 24)


def _rotate(points, pivot, axis, angle):
    """Rotate points (K x 3) about ``pivot`` around a unit coordinate axis."""
    c, s = np.cos(angle), np.sin(angle)
    i, j = [(1, 2), (2, 0), (0, 1)][axis]
    rel = points - pivot
    out = rel.copy()
    out[:, i] = c * rel[:, i] - s * rel[:, j]
    out[:, j] = s * rel[:, i] + c * rel[:, j]
    return out + pivot


def _motion_static(pose, phase, amp):
    return pose


def _limb_swing(joints, pivot, axis, sign):
    def motion(pose, phase, amp):
        out = pose.copy()
        angle = sign * amp * 1.4 * (1 - np.cos(phase)) / 2
        out[list(joints)] = _rotate(pose[list(joints)], pose[pivot], axis, angle)
        return out
    return motion


def _both_arms_wave(pose, phase, amp):
    out = _limb_swing(_LEFT_ARM, 4, 2, -1)(pose, phase, amp)
    return _limb_swing(_RIGHT_ARM, 8, 2, 1)(out, phase, amp)


def _squat(pose, phase, amp):
    out = pose.copy()
    out[:, 1] -= amp * 0.25 * (1 - np.cos(phase)) / 2
    return out


def _torso_twist(pose, phase, amp):
    out = pose.copy()
    idx = list(_UPPER)
    out[idx] = _rotate(pose[idx], pose[0], 1, amp * 0.6 * np.sin(phase))
    return out


def _head_nod(pose, phase, amp):
    out = pose.copy()
    out[[2, 3]] = _rotate(pose[[2, 3]], pose[20], 0, amp * 0.5 * np.sin(phase))
    return out


# class index -> (name, motion); the first one is the static pose with jitter
SYNTH_MOTIONS = (
    ("static pose", _motion_static),
    ("right arm raise", _limb_swing(_RIGHT_ARM, 8, 2, 1)),
    ("left arm raise", _limb_swing(_LEFT_ARM, 4, 2, -1)),
    ("right leg swing", _limb_swing(_RIGHT_LEG, 16, 0, -1)),
    ("left leg swing", _limb_swing(_LEFT_LEG, 12, 0, -1)),
    ("both arms wave", _both_arms_wave),
    ("squat", _squat),
    ("torso twist", _torso_twist),
    ("head nod", _head_nod),
)


def synth_class_names(num_classes):
    names = []
    for c in range(num_classes):
        base, rep = SYNTH_MOTIONS[c % len(SYNTH_MOTIONS)][0], c // len(SYNTH_MOTIONS)
        names.append(base if rep == 0 else f"{base} x{rep + 1}")
    return names


def synth_generate(seed, num_classes=8, per_class=16, num_frames=32, noise=1.0, num_subjects=8,
                   test_subjects=None):
    """Deterministic labelled sequences on the NTU topology.

    Class ``c`` uses motion ``c mod 9`` at frequency multiplier ``1 + c // 9``.
    ``noise`` scales every per-sequence perturbation (joint jitter, amplitude,
    phase, speed, global offset); ``noise=0`` makes all exemplars of a class
    identical. Subjects cycle through ``1..num_subjects``; by default the
    last quarter of them form the cross-subject test split.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    base = rest_pose()
    names = synth_class_names(num_classes)
    seqs = []
    t = np.arange(num_frames)
    for c in range(num_classes):
        motion = SYNTH_MOTIONS[c % len(SYNTH_MOTIONS)][1]
        freq = 1 + c // len(SYNTH_MOTIONS)
        for k in range(per_class):
            amp = 1.0 + noise * rng.uniform(-0.15, 0.15)
            speed = freq * (1.0 + noise * rng.uniform(-0.1, 0.1))
            phase0 = noise * rng.uniform(-0.3, 0.3)
            offset = noise * rng.normal(0.0, 0.05, size=3)
            phases = 2 * np.pi * speed * t / num_frames + phase0
            body = np.stack([motion(base, ph, amp) for ph in phases]) + offset
            body = body + noise * rng.normal(0.0, 0.01, size=body.shape)
            frames = np.zeros((num_frames, MAX_BODIES, ntu.NUM_JOINTS, 3))
            frames[:, 0] = body
            subject = 1 + (c * per_class + k) % num_subjects
            seqs.append(SkeletonSequence(
                frames=frames,
                label=c,
                subject_id=subject,
                camera_id=1 + k % 3,
                setup_id=1 + k % 2,
                source_id=f"synth_c{c:03d}_{k:04d}",
            ))
    if test_subjects is None:
        n_test = max(1, num_subjects // 4)
        test_subjects = set(range(num_subjects - n_test + 1, num_subjects + 1))
    test_subjects = set(test_subjects)
    train_subjects = set(range(1, num_subjects + 1)) - test_subjects
    return DatasetManifest(
        sequences=seqs,
        num_classes=num_classes,
        split_rule="cross_subject",
        train_ids=train_subjects,
        test_ids=test_subjects,
        class_names=names,
    )


def stack_sequences(seqs):
    """Batch equal-length sequences into an (N, C, T, V, M) array and labels."""
    x = np.stack([s.frames for s in seqs]).transpose(0, 4, 1, 3, 2)
    y = np.array([s.label for s in seqs], dtype=np.int64)
    return np.ascontiguousarray(x), y
