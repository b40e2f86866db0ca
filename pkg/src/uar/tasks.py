"""Evaluation tasks over a trained model: per-clip classification,
transition localization, and anticipation.

Anticipation with horizon tau_a scores the decode of the first N - delta
clips against the labels delta positions later; tau_a = 0 is exactly
classification, which is how classification is implemented. Localization
reads the transitional emission column before any CRF decoding by default.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import pipeline
from .crf import TRANSITIONAL, viterbi
from .data import sample_clips, split_corpus
from .errors import DataError, ParameterError


@dataclass
class EvalReport:
    task: str
    accuracy: float | None = None
    per_class: list | None = None
    confusion: list | None = None
    threshold_accuracy: dict | None = None
    tau_a: float | None = None
    num_videos: int = 0
    num_clips: int = 0
    skipped: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def _predict(model, seq, predict_fn):
    if predict_fn is not None:
        return predict_fn(seq)
    return pipeline.predict_emissions(model, seq)


def _decode(model, emissions):
    if model.settings.get("use_crf") and model.crf is not None:
        return viterbi(emissions, model.crf)
    return emissions.argmax(axis=1)


def _labeled(corpus, split):
    videos = split_corpus(corpus, split)
    if not videos:
        raise DataError(f"no videos in split {split!r}")
    for seq in videos:
        if seq.transition_time is None:
            raise DataError(f"{seq.video_id}: cannot evaluate without a transition time")
    return videos


def evaluate_anticipation(model, corpus, tau_a=None, split="val", predict_fn=None):
    """Decode truncated emissions against labels tau_a seconds ahead."""
    if tau_a is None:
        tau_a = float(model.settings.get("tau_a", 0.0))
    if tau_a < 0:
        raise ParameterError(f"tau_a must be >= 0, got {tau_a}")
    stride = model.settings.get("clip_stride", 4)
    confusion = np.zeros((3, 3), dtype=np.int64)
    support = np.zeros(3, dtype=np.int64)
    videos = scored = clips = skipped = 0
    for seq in _labeled(corpus, split):
        videos += 1
        emissions, windows = _predict(model, seq, predict_fn)
        labels = np.array([w.label for w in windows], dtype=np.int64)
        delta = pipeline.anticipation_delta(tau_a, seq.fps, stride)
        if emissions is None or delta >= len(labels):
            skipped += 1
            continue
        targets = labels[delta:]
        used = emissions[:len(targets)]
        preds = _decode(model, used)
        for gt, pred in zip(targets, preds):
            confusion[gt, pred] += 1
        support += np.bincount(targets, minlength=3)
        clips += len(targets)
        scored += 1
    if clips == 0:
        raise DataError("anticipation horizon leaves no clips to score")
    accuracy = float(np.trace(confusion) / clips)
    row_sums = confusion.sum(axis=1)
    per_class = [float(confusion[i, i] / row_sums[i]) if row_sums[i] else None
                 for i in range(3)]
    return EvalReport(
        task="anticipation" if tau_a > 0 else "classification",
        accuracy=accuracy,
        per_class=per_class,
        confusion=confusion.tolist(),
        tau_a=tau_a,
        num_videos=scored,
        num_clips=clips,
        skipped=skipped,
        extra={"class_support": support.tolist()},
    )


def evaluate_classification(model, corpus, split="val", predict_fn=None):
    return evaluate_anticipation(model, corpus, tau_a=0.0, split=split, predict_fn=predict_fn)


def localize_transition(model, seq, predict_fn=None, mode="emission"):
    """Predicted transition time: the center of the clip whose transitional
    emission is largest (ties pick the earlier clip). mode "viterbi"
    restricts the argmax to clips the decoded path labels transitional,
    falling back to all clips when the path has none."""
    if mode not in ("emission", "viterbi"):
        raise ParameterError(f"unknown localization mode {mode!r}")
    emissions, windows = _predict(model, seq, predict_fn)
    if emissions is None:
        return None
    col = emissions[:, TRANSITIONAL]
    candidates = np.arange(len(col))
    if mode == "viterbi" and model.crf is not None:
        on_path = np.where(_decode(model, emissions) == TRANSITIONAL)[0]
        if len(on_path):
            candidates = on_path
    best = candidates[int(np.argmax(col[candidates]))]
    return windows[best].center_time


def evaluate_localization(model, corpus, thresholds=(0.25, 1.0), split="val",
                          predict_fn=None, mode="emission"):
    """Fraction of videos whose predicted transition time lands within each
    threshold (seconds) of the truth. Videos whose transition frame is not
    covered by any clip window are excluded and counted."""
    if not thresholds or any(t < 0 for t in thresholds):
        raise ParameterError(f"thresholds must be non-negative, got {thresholds}")
    hits = {float(t): 0 for t in thresholds}
    scored = excluded = 0
    for seq in _labeled(corpus, split):
        tf = int(seq.transition_time * seq.fps)
        windows = sample_clips(
            seq, model.settings.get("clip_len", 16), model.settings.get("clip_stride", 4))
        if not any(w.start <= tf < w.end for w in windows):
            excluded += 1
            continue
        pred_time = localize_transition(model, seq, predict_fn=predict_fn, mode=mode)
        if pred_time is None:
            excluded += 1
            continue
        err = abs(pred_time - seq.transition_time)
        for t in hits:
            hits[t] += int(err <= t)
        scored += 1
    if scored == 0:
        raise DataError("no videos left to localize")
    return EvalReport(
        task="localization",
        threshold_accuracy={f"{t:g}": hits[t] / scored for t in sorted(hits)},
        num_videos=scored,
        skipped=excluded,
    )


def summary_csv(rows):
    """rows: list of (variant_name, {task_name: EvalReport}) pairs."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "classification_acc", "loc_acc@0.25", "loc_acc@1",
                     "anticipation_acc"])
    for name, reports in rows:
        cls = reports.get("classification")
        loc = reports.get("localization")
        ant = reports.get("anticipation")
        writer.writerow([
            name,
            f"{cls.accuracy:.4f}" if cls else "",
            f"{loc.threshold_accuracy['0.25']:.4f}" if loc else "",
            f"{loc.threshold_accuracy['1']:.4f}" if loc else "",
            f"{ant.accuracy:.4f}" if ant else "",
        ])
    return buf.getvalue()
