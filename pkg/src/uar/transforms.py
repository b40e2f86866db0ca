"""Temporal transformations over unit-index sequences.

Units are frames at the first training level and clips at the second. Every
transformation rearranges the *positions* of the input index list, so
transforms compose (e.g. two half-speed subsamplings equal one quarter-speed
one). Each transformed sequence carries a discrete label in 1..8 used as the
pretext-classification target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, SequenceTooShortError

# label scheme: 1 original, 2/3/4 uniform speed-up by 1/2, 1/4, 1/8,
# 5 random-point speed-up, 6 double flip, 7 shuffle, 8 warp
LABEL_BY_KIND = {
    "original": 1,
    "speed_half": 2,
    "speed_quarter": 3,
    "speed_eighth": 4,
    "random_point_speed_up": 5,
    "double_flip": 6,
    "shuffle": 7,
    "warp": 8,
}
KIND_BY_LABEL = {v: k for k, v in LABEL_BY_KIND.items()}

SPEED_GROUP = ("speed_half", "speed_quarter", "speed_eighth")
DIRECTION_GROUP = ("random_point_speed_up", "double_flip", "shuffle", "warp")

_RATIO_KINDS = {0.5: "speed_half", 0.25: "speed_quarter", 0.125: "speed_eighth"}
SPEED_RATIOS = (0.5, 0.25, 0.125)


@dataclass
class UnitSequence:
    """An ordered selection of unit indices from a video of t units."""

    indices: np.ndarray
    t: int
    level: str = "frame"  # "frame" | "clip"

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.t):
            raise ParameterError(f"indices outside [0, {self.t})")
        if self.level not in ("frame", "clip"):
            raise ParameterError(f"unknown level {self.level!r}")

    def __len__(self):
        return int(self.indices.size)


def original_sequence(t, level="frame"):
    if t < 1:
        raise SequenceTooShortError("need at least one unit")
    return UnitSequence(np.arange(t), t, level)


@dataclass
class TransformRecord:
    output: UnitSequence
    label: int
    kind: str
    params: dict = field(default_factory=dict)


def _positions(seq, pos):
    return UnitSequence(seq.indices[np.asarray(pos, dtype=np.int64)], seq.t, seq.level)


def speed_up(seq, ratio):
    """Uniformly subsample every (1/ratio)-th unit, starting at the first."""
    if ratio not in _RATIO_KINDS:
        raise ParameterError(f"ratio must be one of {sorted(_RATIO_KINDS)}, got {ratio}")
    stride = round(1.0 / ratio)
    if len(seq) < stride:
        raise SequenceTooShortError(f"speed-up 1/{stride} needs at least {stride} units")
    return _positions(seq, np.arange(0, len(seq), stride))


def speed_up_length(length, ratio):
    """Output length of speed_up without materialising it."""
    return -(-length // round(1.0 / ratio))


def random_point_speed_up(seq, ri, rho):
    """Keep the first ri units, then subsample the rest with stride rho.

    ri is 1-based (1 <= ri <= length); ri == length is the identity. The
    tail unit is not force-appended, keeping the stride uniform.
    """
    n = len(seq)
    if not 1 <= ri <= n:
        raise ParameterError(f"ri must be in [1, {n}], got {ri}")
    if rho not in (2, 4, 8):
        raise ParameterError(f"rho must be one of (2, 4, 8), got {rho}")
    pos = list(range(ri)) + list(range(ri - 1 + rho, n, rho))
    return _positions(seq, pos)


def double_flip(seq):
    """Append the mirrored sequence (without repeating the pivot)."""
    n = len(seq)
    if n < 2:
        raise SequenceTooShortError("double flip needs at least 2 units")
    pos = np.concatenate([np.arange(n), np.arange(n - 2, -1, -1)])
    return _positions(seq, pos)


def shuffle(seq, rng):
    """Random non-identity permutation of the units."""
    n = len(seq)
    if n < 3:
        raise SequenceTooShortError("shuffle needs at least 3 units")
    perm = rng.permutation(n)
    while (perm == np.arange(n)).all():
        perm = rng.permutation(n)
    return _positions(seq, perm)


def warp(seq, rng, keep_fraction=0.5):
    """Random subset of units, kept in increasing order."""
    n = len(seq)
    if not 0.0 < keep_fraction < 1.0:
        raise ParameterError(f"keep_fraction must be in (0, 1), got {keep_fraction}")
    size = round(n * keep_fraction)
    if size < 2:
        raise SequenceTooShortError("warp would keep fewer than 2 units")
    pos = np.sort(rng.choice(n, size=size, replace=False))
    return _positions(seq, pos)


def temporal_crop(seq, rng, min_fraction=0.75):
    """Contiguous random crop to between min_fraction and 100% of the length."""
    n = len(seq)
    if n < 4:
        raise SequenceTooShortError("temporal crop needs at least 4 units")
    lo = int(np.ceil(n * min_fraction))
    length = int(rng.integers(lo, n + 1))
    start = int(rng.integers(0, n - length + 1))
    return _positions(seq, np.arange(start, start + length))


def make_batch(seq, rng, min_len, exclude=()):
    """Build the pretext batch: the original sequence plus one record per
    enabled transformation.

    The speed-up ratio is sampled uniformly among the ratios whose output
    would still have at least min_len units (48 at the frame level, 3 at the
    clip level); if none survives the filter the sequence is too short.
    exclude names transformations to drop ("speed_up" covers all ratios),
    which is the ablation surface for the speed/direction groups and for
    leave-one-out sweeps.
    """
    bad = set(exclude) - {"speed_up", *DIRECTION_GROUP}
    if bad:
        raise ParameterError(f"unknown transforms in exclude: {sorted(bad)}")
    n = len(seq)
    if n < min_len:
        raise SequenceTooShortError(f"sequence of {n} units is below min_len={min_len}")

    records = [TransformRecord(_positions(seq, np.arange(n)), 1, "original")]

    if "speed_up" not in exclude:
        surviving = [r for r in SPEED_RATIOS if speed_up_length(n, r) >= min_len]
        if not surviving:
            raise SequenceTooShortError(
                f"no speed-up ratio keeps {n} units above min_len={min_len}"
            )
        ratio = surviving[int(rng.integers(0, len(surviving)))]
        kind = _RATIO_KINDS[ratio]
        records.append(
            TransformRecord(speed_up(seq, ratio), LABEL_BY_KIND[kind], kind, {"ratio": ratio})
        )
    if "random_point_speed_up" not in exclude:
        # ri is confined to [n/4, n/2]: ri = n is the identity, ri = 1 with
        # rho = 2 reproduces the half-speed record exactly, a change point
        # in the last half leaves too little subsampled tail to tell the
        # record from the original (the same degeneracy argument behind
        # resampling identity shuffles), and a change point before n/4 can
        # disappear entirely under the 3/4 temporal crop, leaving a record
        # indistinguishable from a plain speed-up
        ri = int(rng.integers(max(n // 4, 2), max(n // 2, 2) + 1))
        rho = int(rng.choice((2, 4, 8)))
        records.append(
            TransformRecord(
                random_point_speed_up(seq, ri, rho), 5, "random_point_speed_up",
                {"ri": ri, "rho": rho},
            )
        )
    if "double_flip" not in exclude:
        records.append(TransformRecord(double_flip(seq), 6, "double_flip"))
    if "shuffle" not in exclude:
        records.append(TransformRecord(shuffle(seq, rng), 7, "shuffle"))
    if "warp" not in exclude:
        records.append(TransformRecord(warp(seq, rng), 8, "warp"))
    return records


# -- JSON-lines debug format ----------------------------------------------


def record_to_json(rec):
    return {
        "kind": rec.kind,
        "label": rec.label,
        "params": rec.params,
        "t": rec.output.t,
        "level": rec.output.level,
        "indices": rec.output.indices.tolist(),
    }


def record_from_json(obj):
    seq = UnitSequence(np.asarray(obj["indices"]), obj["t"], obj["level"])
    return TransformRecord(seq, obj["label"], obj["kind"], dict(obj["params"]))


def records_to_jsonl(records):
    return "\n".join(json.dumps(record_to_json(r), sort_keys=True) for r in records) + "\n"


def records_from_jsonl(text):
    return [record_from_json(json.loads(line)) for line in text.splitlines() if line.strip()]
