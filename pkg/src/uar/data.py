"""Per-frame feature corpora: binary file format, manifests, clip windows
and labels, a synthetic trajectory generator, and checkpoint IO.

A corpus is a manifest JSON listing videos plus one feature file per video.
Feature files hold float32 on disk; everything in memory is float64, but the
generator round-trips its output through float32 so an in-memory corpus is
bit-identical to one written and reloaded.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

FEATURE_MAGIC = b"UARFEAT1"
CHECKPOINT_MAGIC = b"UARCKPT1"
SPLITS = ("train", "val", "unlabeled")


@dataclass
class FeatureSequence:
    """One video's features (num_frames, dim) with its timing metadata.
    transition_time is seconds from video start, None for unlabeled."""

    video_id: str
    features: np.ndarray
    fps: float
    transition_time: float | None = None
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataError(f"{self.video_id}: features must be (T, D) with T >= 1")
        if self.fps <= 0:
            raise DataError(f"{self.video_id}: fps must be positive")
        if self.split not in SPLITS:
            raise DataError(f"{self.video_id}: unknown split {self.split!r}")
        if self.transition_time is not None:
            end = self.num_frames / self.fps
            if not 0.0 <= self.transition_time <= end:
                raise DataError(
                    f"{self.video_id}: transition at {self.transition_time}s is outside "
                    f"the video ([0, {end:.3f}]s)"
                )

    @property
    def num_frames(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass
class ClipWindow:
    start: int
    length: int
    center_time: float
    label: int | None = None

    @property
    def end(self):
        return self.start + self.length


# -- feature files ---------------------------------------------------------


def write_features(path, features):
    features = np.asarray(features)
    if features.ndim != 2:
        raise DataError(f"features must be 2-D, got shape {features.shape}")
    t, d = features.shape
    payload = np.ascontiguousarray(features, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", t, d))
        fh.write(payload)


def read_features(path):
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"{path}: bad magic at offset 0: {magic!r}")
        head = fh.read(8)
        if len(head) < 8:
            raise FormatError(f"{path}: truncated header at offset {8 + len(head)}")
        t, d = struct.unpack("<II", head)
        if t < 1 or d < 1:
            raise FormatError(f"{path}: invalid dimensions ({t}, {d}) at offset 8")
        payload = fh.read(4 * t * d)
        if len(payload) != 4 * t * d:
            raise FormatError(
                f"{path}: truncated payload at offset {16 + len(payload)} "
                f"(expected {4 * t * d} bytes, got {len(payload)})"
            )
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after offset {16 + 4 * t * d}")
    data = np.frombuffer(payload, dtype="<f4").reshape(t, d)
    return data.astype(np.float64)


# -- manifests -------------------------------------------------------------


def write_corpus(corpus, out_dir, force=False):
    """Write feature files plus manifest.json under out_dir; returns the
    manifest path."""
    out_dir = Path(out_dir)
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists() and not force:
        raise DataError(f"{manifest_path} exists; pass force to overwrite")
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    videos = []
    for seq in corpus:
        rel = f"features/{seq.video_id}.bin"
        write_features(out_dir / rel, seq.features)
        videos.append({
            "video_id": seq.video_id,
            "path": rel,
            "fps": seq.fps,
            "transition_time": seq.transition_time,
            "split": seq.split,
        })
    manifest_path.write_text(json.dumps({"version": 1, "videos": videos}, indent=2) + "\n")
    return manifest_path


def load_corpus(manifest_path):
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise DataError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: not valid JSON ({exc})") from None
    if not isinstance(manifest, dict) or manifest.get("version") != 1:
        raise FormatError(f"{manifest_path}: expected a version-1 manifest")
    corpus = []
    for entry in manifest.get("videos", []):
        missing = {"video_id", "path", "fps", "transition_time", "split"} - set(entry)
        if missing:
            raise FormatError(f"{manifest_path}: entry missing keys {sorted(missing)}")
        features = read_features(manifest_path.parent / entry["path"])
        corpus.append(FeatureSequence(
            video_id=entry["video_id"],
            features=features,
            fps=float(entry["fps"]),
            transition_time=entry["transition_time"],
            split=entry["split"],
        ))
    return corpus


def split_corpus(corpus, split):
    if split not in SPLITS:
        raise DataError(f"unknown split {split!r}")
    return [seq for seq in corpus if seq.split == split]


# -- clip windows ----------------------------------------------------------


def num_clips(num_frames, clip_len=16, stride=4):
    if num_frames < clip_len:
        return 0
    return (num_frames - clip_len) // stride + 1


def sample_clips(seq, clip_len=16, stride=4):
    """Sliding clip windows over the video; labels are filled in when the
    transition time is known. A window overlapping the transition frame is
    transitional (1); entirely before is intentional (0); after is
    unintentional (2)."""
    n = num_clips(seq.num_frames, clip_len, stride)
    windows = []
    tf = None
    if seq.transition_time is not None:
        tf = int(seq.transition_time * seq.fps)
    for i in range(n):
        start = i * stride
        center_time = (start + clip_len / 2.0) / seq.fps
        label = None
        if tf is not None:
            if start + clip_len <= tf:
                label = 0
            elif start > tf:
                label = 2
            else:
                label = 1
        windows.append(ClipWindow(start, clip_len, center_time, label))
    return windows


def clip_labels(seq, clip_len=16, stride=4):
    windows = sample_clips(seq, clip_len, stride)
    if any(w.label is None for w in windows):
        raise DataError(f"{seq.video_id}: no transition time, cannot label clips")
    return np.array([w.label for w in windows], dtype=np.int64)


# -- synthetic corpus ------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Random point trajectories whose motion regime changes once per video.

    The first dim/2 channels observe the position through random projections
    wrapped in sin(), tuned so one frame of motion at base_speed rotates each
    phase by a tenth to a bit under one radian: bounded like a real embedding
    but clearly frame-discriminative. The second half carries the raw
    velocity times vel_gain. Both halves are on a comparable scale (the
    observation channels are z-scored per video), then i.i.d. noise is added.
    Before the transition the point moves at base_speed along a slowly
    drifting unit direction; after it, speed is multiplied by speed_jump and
    the direction is optionally negated. speed_jump=1.0 with
    flip_direction=False is the negative control: the transition has no
    effect on the dynamics.
    """

    num_train: int = 32
    num_val: int = 16
    num_unlabeled: int = 32
    len_range: tuple = (96, 200)
    dim: int = 64
    fps: float = 16.0
    base_speed: float = 1.0
    speed_jump: float = 4.0
    flip_direction: bool = False
    drift: float = 0.1
    noise: float = 0.05
    vel_gain: float = 1.0
    transition_range: tuple = (0.3, 0.7)
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2 != 0:
            raise DataError(f"dim must be even and >= 2, got {self.dim}")
        if self.len_range[0] < 2 or self.len_range[0] > self.len_range[1]:
            raise DataError(f"bad len_range {self.len_range}")
        lo, hi = self.transition_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise DataError(f"transition_range must be within [0, 1], got {self.transition_range}")


def _synth_video(spec, rng, video_id, split):
    d = spec.dim // 2
    t = int(rng.integers(spec.len_range[0], spec.len_range[1] + 1))
    tf = int(rng.uniform(*spec.transition_range) * t)
    tf = min(max(tf, 1), t - 1)

    u = rng.normal(size=d)
    u /= np.linalg.norm(u)
    x = rng.normal(size=d)
    # bounded observation of the walk: each channel reads the position
    # through a random projection and a sin().  Row c advances by roughly
    # rates[c] radians per frame at base_speed, so consecutive frames are
    # separated by a visible rotation whatever the trajectory's absolute
    # scale; raw positions would either drown the row (unnormalized) or
    # leave per-frame differences of order 1/T (standardized)
    proj = rng.normal(size=(d, d))
    proj /= np.linalg.norm(proj, axis=1, keepdims=True)
    rates = np.geomspace(0.25, 0.9, d)
    proj *= (rates * np.sqrt(d) / spec.base_speed)[:, None]
    feats = np.zeros((t, spec.dim))
    for i in range(t):
        if i > 0:
            u = u + spec.drift * rng.normal(size=d)
            u /= np.linalg.norm(u)
        if i == tf:
            if spec.flip_direction:
                u = -u
        speed = spec.base_speed * (spec.speed_jump if i >= tf else 1.0)
        v = speed * u
        if i > 0:
            x = x + v
        feats[i, :d] = proj @ x
        feats[i, d:] = spec.vel_gain * v / spec.base_speed
    # standardize per video so both halves sit at the same scale
    pos = np.sin(feats[:, :d])
    feats[:, :d] = (pos - pos.mean(axis=0)) / (pos.std(axis=0) + 1e-6)
    if spec.noise > 0:
        feats = feats + spec.noise * rng.normal(size=feats.shape)
    # round-trip through the on-disk precision so in-memory == reloaded
    feats = feats.astype(np.float32).astype(np.float64)

    # timestamp at the centre of the transition frame, so floor(time * fps)
    # recovers the frame index exactly at any fps
    transition_time = None if split == "unlabeled" else (tf + 0.5) / spec.fps
    return FeatureSequence(video_id, feats, spec.fps, transition_time, split)


def synthesize(spec):
    """Generate the full corpus deterministically from spec.seed; each video
    draws from its own child RNG stream so per-video content is stable under
    changes to the corpus sizes of the other splits."""
    plan = [("train", spec.num_train), ("val", spec.num_val), ("unlabeled", spec.num_unlabeled)]
    corpus = []
    for split, count in plan:
        for i in range(count):
            child = np.random.default_rng(
                np.random.SeedSequence([spec.seed, SPLITS.index(split), i]))
            corpus.append(_synth_video(spec, child, f"{split}_{i:04d}", split))
    return corpus


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(path, arrays, meta):
    """Binary checkpoint: magic, little-endian u64 header length, JSON header
    (meta plus the tensor manifest), then float64 blobs in manifest order."""
    path = Path(path)
    names = sorted(arrays)
    header = dict(meta)
    header["tensors"] = [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names]
    blob = json.dumps(header, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (arrays, meta): named float64 arrays and the header without
    the tensor manifest."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    if raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0: {raw[:8]!r}")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header length at offset 8")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise FormatError(f"{path}: truncated header at offset 16")
    try:
        header = json.loads(raw[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad header JSON ({exc})") from None
    offset = 16 + hlen
    arrays = {}
    for entry in header.pop("tensors", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise FormatError(f"{path}: truncated tensor {entry['name']!r} at offset {offset}")
        arrays[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise FormatError(f"{path}: trailing bytes after offset {offset}")
    return arrays, header
