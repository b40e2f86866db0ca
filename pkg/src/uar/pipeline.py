"""Three-stage training pipeline.

Stage 1 trains the frame encoder on frame-level pretext transforms (8-way
classification through a fresh linear head). Stage 2 keeps fine-tuning the
frame encoder while training the clip encoder on clip-level transforms of
the clip-vector sequence. Stage 3 is supervised: the clip encoder runs in
update mode, a fresh linear head produces per-clip emissions, and a CRF (or
plain per-clip cross-entropy when disabled) provides the loss. Heads are
never carried across stages; encoder weights are.

Anticipation shifts the supervision: with horizon tau_a seconds the clip at
position i is trained against the label at i + delta, delta =
round(tau_a * fps / stride), and the last delta clips are dropped.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import crf as crf_mod
from . import data as data_mod
from .encoder import EncoderConfig, TemporalEncoder
from .errors import (CheckpointMismatchError, ConfigError, DataError,
                     ParameterError, SequenceTooShortError)
from .transforms import make_batch, original_sequence, temporal_crop

log = logging.getLogger(__name__)

TRANSITION_MODES = ("binary", "prior", "trainable")


# -- optimizer and schedules ----------------------------------------------


class AdamW:
    """Adam with decoupled weight decay:
    p <- p - lr * (mhat / (sqrt(vhat) + eps) + weight_decay * p).
    A parameter with no gradient this step still decays."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.t = 0

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self, lr=None, grad_scale=1.0):
        if lr is None:
            lr = self.lr
        b1, b2 = self.betas
        self.t += 1
        for k, p in self.params.items():
            g = p.grad * grad_scale if p.grad is not None else np.zeros_like(p.data)
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            mhat = self.m[k] / (1.0 - b1 ** self.t)
            vhat = self.v[k] / (1.0 - b2 ** self.t)
            p.data = p.data - lr * (mhat / (np.sqrt(vhat) + self.eps)
                                    + self.weight_decay * p.data)


def cosine_lr(step, total_steps, lr_start=1e-4, lr_end=1e-6):
    """Cosine decay from lr_start (step 0) to lr_end (step total_steps),
    exact at both endpoints; steps past the end clamp to lr_end."""
    if total_steps < 1:
        raise ParameterError(f"total_steps must be >= 1, got {total_steps}")
    if step < 0:
        raise ParameterError(f"step must be >= 0, got {step}")
    if lr_end > lr_start:
        raise ParameterError(f"lr_end {lr_end} exceeds lr_start {lr_start}")
    if step == 0:
        return lr_start
    if step >= total_steps:
        if step > total_steps:
            log.warning("cosine_lr: step %d past total_steps %d, clamping", step, total_steps)
        return lr_end
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * step / total_steps))


def class_weights(counts):
    """Inverse-frequency weights max(counts) / counts."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size < 1:
        raise ParameterError(f"counts must be a 1-D vector, got shape {counts.shape}")
    if (counts <= 0).any():
        raise ParameterError(f"all class counts must be positive, got {counts.tolist()}")
    return counts.max() / counts


# -- configuration ---------------------------------------------------------


@dataclass
class TrainConfig:
    stage: int = 1
    epochs: int = 10
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    weight_decay: float = 1e-4
    batch_size: int = 8
    seed: int = 0
    window_len: int = 128       # stage-1 frame window before transforms
    windows_per_video: int = 1
    min_len_frame: int = 48
    min_len_clip: int = 3
    clip_len: int = 16
    clip_stride: int = 4
    transform_exclude: tuple = ()
    tau_a: float = 0.0          # anticipation horizon, seconds
    use_crf: bool = True
    crf_mode: str = "trainable"
    crf_allow_skip: bool = False
    use_clip_encoder: bool = True   # stage 3: False feeds clip vectors straight to the head
    frame_mode: str = "encoder"     # "gap": mean-pool frames instead of the frame encoder
    freeze_frame: bool = False
    freeze_clip: bool = False

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ConfigError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.epochs < 1 or self.batch_size < 1 or self.windows_per_video < 1:
            raise ConfigError("epochs, batch_size and windows_per_video must be >= 1")
        if self.lr_start <= 0 or self.lr_end <= 0 or self.lr_end > self.lr_start:
            raise ConfigError(f"need 0 < lr_end <= lr_start, got {self.lr_start}..{self.lr_end}")
        if self.clip_len < 1 or self.clip_stride < 1 or self.window_len < 1:
            raise ConfigError("clip_len, clip_stride and window_len must be >= 1")
        if self.tau_a < 0:
            raise ConfigError(f"tau_a must be >= 0, got {self.tau_a}")
        if self.crf_mode not in TRANSITION_MODES:
            raise ConfigError(f"crf_mode must be one of {TRANSITION_MODES}, got {self.crf_mode!r}")
        if self.frame_mode not in ("encoder", "gap"):
            raise ConfigError(f"frame_mode must be 'encoder' or 'gap', got {self.frame_mode!r}")


def _rng(tcfg, stream, *extra):
    streams = {"init": 0, "dropout": 1, "data": 2}
    return np.random.default_rng(
        np.random.SeedSequence([tcfg.seed, tcfg.stage, streams[stream], *extra]))


# -- model container -------------------------------------------------------


@dataclass
class Model:
    frame_cfg: EncoderConfig | None
    clip_cfg: EncoderConfig | None
    frame: TemporalEncoder | None
    clip: TemporalEncoder | None
    heads: dict = field(default_factory=dict)
    crf: crf_mod.TransitionMatrix | None = None
    settings: dict = field(default_factory=dict)

    def head_apply(self, name, x):
        h = self.heads[name]
        return ad.add(ad.matmul(x, h["w"]), h["b"])

    def named_params(self):
        out = {}
        if self.frame is not None:
            out.update(self.frame.params)
        if self.clip is not None:
            out.update(self.clip.params)
        for name, h in self.heads.items():
            out[f"head.{name}.w"] = h["w"]
            out[f"head.{name}.b"] = h["b"]
        if self.crf is not None and self.crf.trainable:
            out["crf.table"] = self.crf.table
        return out


def init_head(in_dim, out_dim, rng):
    return {
        "w": ad.Tensor(rng.normal(0.0, 0.02, (in_dim, out_dim)), requires_grad=True),
        "b": ad.Tensor(np.zeros(out_dim), requires_grad=True),
    }


def _copy_params(params):
    return {k: ad.Tensor(np.array(t.data, copy=True), requires_grad=True)
            for k, t in params.items()}


def _require_same_config(kind, have, want):
    if have is None:
        raise CheckpointMismatchError(f"checkpoint has no {kind} encoder")
    if have != want:
        a, b = asdict(have), asdict(want)
        diff = {k: (a[k], b[k]) for k in a if a[k] != b[k]}
        raise CheckpointMismatchError(f"{kind} encoder config differs from checkpoint: {diff}")


def _settings(tcfg):
    return {
        "clip_len": tcfg.clip_len,
        "clip_stride": tcfg.clip_stride,
        "use_crf": tcfg.use_crf,
        "use_clip_encoder": tcfg.use_clip_encoder,
        "frame_mode": tcfg.frame_mode,
        "tau_a": tcfg.tau_a,
    }


@dataclass
class StageResult:
    model: Model
    metrics: list
    skipped: int = 0


def _freeze(params):
    for t in params.values():
        t.requires_grad = False


def _metric(stage, epoch, step, loss, accuracy, lr, skipped):
    return {
        "ts": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "stage": stage,
        "epoch": epoch,
        "step": step,
        "loss": round(float(loss), 10),
        "accuracy": round(float(accuracy), 10),
        "lr": float(lr),
        "skipped": int(skipped),
    }


# -- emissions (stage 3 and evaluation) ------------------------------------


def clip_vectors(model, seq, windows, training=False, rng=None):
    """One vector per clip window: frame-encoder cls output, or the frame
    mean in gap mode. Frames inside each clip keep their original order."""
    rows = []
    for w in windows:
        feats = ad.Tensor(seq.features[w.start:w.end])
        if model.settings.get("frame_mode") == "gap":
            rows.append(ad.mean(feats, axis=0, keepdims=True))
        else:
            rows.append(model.frame.encode(feats, "aggregate", training=training, rng=rng))
    return rows[0] if len(rows) == 1 else ad.concat(rows, axis=0)


def forward_emissions(model, seq, training=False, rng=None):
    """Per-clip class scores (N, 3) for one video, plus the clip windows."""
    s = model.settings
    windows = data_mod.sample_clips(seq, s["clip_len"], s["clip_stride"])
    if not windows:
        return None, windows
    x = clip_vectors(model, seq, windows, training=training, rng=rng)
    if s["use_clip_encoder"]:
        h = model.clip.encode(x, "update", training=training, rng=rng)
    else:
        h = x
    return model.head_apply("mlp3", h), windows


def predict_emissions(model, seq):
    """Inference-mode emissions as a plain array."""
    with ad.no_grad():
        e, windows = forward_emissions(model, seq, training=False)
    return (None if e is None else e.data), windows


def anticipation_delta(tau_a, fps, stride):
    return int(round(tau_a * fps / stride))


# -- stage runners ---------------------------------------------------------


def _expect_stage(tcfg, stage):
    if tcfg.stage != stage:
        raise ConfigError(f"config says stage {tcfg.stage}, runner is stage {stage}")


def _pretext_videos(corpus):
    videos = [s for s in corpus if s.split in ("train", "unlabeled")]
    if not videos:
        raise DataError("no train or unlabeled videos in the corpus")
    return videos


def _run_pretext_epochs(tcfg, videos, sample_fn, model, trainables):
    """Shared stage-1/2 loop: per epoch, per sampled video, sample_fn builds
    (logits, labels) for one pretext batch; steps every batch_size samples."""
    opt = AdamW(trainables, lr=tcfg.lr_start, weight_decay=tcfg.weight_decay)
    drop_rng = _rng(tcfg, "dropout")
    per_epoch = len(videos) * tcfg.windows_per_video
    total_steps = max(tcfg.epochs * math.ceil(per_epoch / tcfg.batch_size) - 1, 1)
    step = 0
    metrics = []
    skipped_total = 0

    for epoch in range(tcfg.epochs):
        data_rng = _rng(tcfg, "data", epoch)
        sample_ids = np.repeat(np.arange(len(videos)), tcfg.windows_per_video)
        data_rng.shuffle(sample_ids)
        losses, correct, seen, skipped, pending = [], 0, 0, 0, 0
        lr = cosine_lr(min(step, total_steps), total_steps, tcfg.lr_start, tcfg.lr_end)

        def flush():
            nonlocal pending, step, lr
            opt.step(lr=lr, grad_scale=1.0 / pending)
            opt.zero_grad()
            pending = 0
            step += 1
            lr = cosine_lr(min(step, total_steps), total_steps, tcfg.lr_start, tcfg.lr_end)

        for vid in sample_ids:
            try:
                logits, labels = sample_fn(videos[vid], data_rng, drop_rng)
            except SequenceTooShortError:
                skipped += 1
                continue
            loss = ad.cross_entropy(logits, labels)
            loss.backward()
            losses.append(loss.item())
            correct += int((logits.data.argmax(axis=1) == labels).sum())
            seen += len(labels)
            pending += 1
            if pending == tcfg.batch_size:
                flush()
        if pending:
            flush()
        if not losses:
            raise DataError("every video was too short for the pretext transforms")
        skipped_total += skipped
        metrics.append(_metric(tcfg.stage, epoch, step, np.mean(losses),
                               correct / max(seen, 1), lr, skipped))
    return metrics, skipped_total


def run_stage1(corpus, frame_cfg, tcfg):
    """Frame-level pretext training from scratch."""
    _expect_stage(tcfg, 1)
    if tcfg.frame_mode == "gap":
        raise ConfigError("gap mode has no frame encoder to pretrain")
    videos = _pretext_videos(corpus)
    init_rng = _rng(tcfg, "init")
    model = Model(
        frame_cfg=frame_cfg, clip_cfg=None,
        frame=TemporalEncoder(frame_cfg, init_rng, name="frame"), clip=None,
        heads={"mlp1": init_head(frame_cfg.model_dim, 8, init_rng)},
        settings=_settings(tcfg),
    )

    def sample(seq, data_rng, drop_rng):
        wlen = min(tcfg.window_len, seq.num_frames)
        start = int(data_rng.integers(0, seq.num_frames - wlen + 1))
        records = make_batch(original_sequence(wlen, "frame"), data_rng,
                             tcfg.min_len_frame, tcfg.transform_exclude)
        rows, labels = [], []
        for rec in records:
            out = temporal_crop(rec.output, data_rng)
            feats = ad.Tensor(seq.features[start + out.indices])
            rows.append(model.frame.encode(feats, "aggregate", training=True, rng=drop_rng))
            labels.append(rec.label - 1)
        return model.head_apply("mlp1", ad.concat(rows, axis=0)), np.array(labels)

    trainables = {**model.frame.params,
                  "head.mlp1.w": model.heads["mlp1"]["w"],
                  "head.mlp1.b": model.heads["mlp1"]["b"]}
    metrics, skipped = _run_pretext_epochs(tcfg, videos, sample, model, trainables)
    return StageResult(model, metrics, skipped)


def run_stage2(corpus, clip_cfg, tcfg, base=None, frame_cfg=None):
    """Clip-level pretext training; fine-tunes the frame encoder from a
    stage-1 model (or from scratch when base is None)."""
    _expect_stage(tcfg, 2)
    videos = _pretext_videos(corpus)
    init_rng = _rng(tcfg, "init")

    frame = None
    if tcfg.frame_mode == "encoder":
        if base is not None:
            if frame_cfg is not None:
                _require_same_config("frame", base.frame_cfg, frame_cfg)
            frame_cfg = base.frame_cfg
            frame = TemporalEncoder(frame_cfg, params=_copy_params(base.frame.params),
                                    name="frame")
        else:
            if frame_cfg is None:
                raise ConfigError("scratch stage 2 needs a frame encoder config")
            frame = TemporalEncoder(frame_cfg, init_rng, name="frame")
        if frame_cfg.model_dim != clip_cfg.model_dim:
            raise ConfigError("frame and clip encoders must share model_dim")

    model = Model(
        frame_cfg=frame_cfg if tcfg.frame_mode == "encoder" else None,
        clip_cfg=clip_cfg,
        frame=frame,
        clip=TemporalEncoder(clip_cfg, init_rng, name="clip"),
        heads={"mlp2": init_head(clip_cfg.model_dim, 8, init_rng)},
        settings=_settings(tcfg),
    )

    def sample(seq, data_rng, drop_rng):
        windows = data_mod.sample_clips(seq, tcfg.clip_len, tcfg.clip_stride)
        if not windows:
            raise SequenceTooShortError("no clip windows")
        records = make_batch(original_sequence(len(windows), "clip"), data_rng,
                             tcfg.min_len_clip, tcfg.transform_exclude)
        x = clip_vectors(model, seq, windows, training=True, rng=drop_rng)
        rows, labels = [], []
        for rec in records:
            sel = ad.gather(x, rec.output.indices)
            rows.append(model.clip.encode(sel, "aggregate", training=True, rng=drop_rng))
            labels.append(rec.label - 1)
        return model.head_apply("mlp2", ad.concat(rows, axis=0)), np.array(labels)

    trainables = {**model.clip.params,
                  "head.mlp2.w": model.heads["mlp2"]["w"],
                  "head.mlp2.b": model.heads["mlp2"]["b"]}
    if frame is not None:
        if tcfg.freeze_frame:
            _freeze(frame.params)
        else:
            trainables.update(frame.params)
    metrics, skipped = _run_pretext_epochs(tcfg, videos, sample, model, trainables)
    return StageResult(model, metrics, skipped)


def shifted_targets(seq, tcfg):
    """Clip labels shifted by the anticipation horizon; None if nothing is
    left to supervise."""
    labels = data_mod.clip_labels(seq, tcfg.clip_len, tcfg.clip_stride)
    delta = anticipation_delta(tcfg.tau_a, seq.fps, tcfg.clip_stride)
    if delta >= len(labels):
        return None
    return labels[delta:] if delta else labels


def run_stage3(corpus, tcfg, base=None, frame_cfg=None, clip_cfg=None):
    """Supervised training of per-clip emissions with the CRF objective (or
    weighted cross-entropy when the CRF is off)."""
    _expect_stage(tcfg, 3)
    train_videos = data_mod.split_corpus(corpus, "train")
    if not train_videos:
        raise DataError("no labeled train videos in the corpus")
    init_rng = _rng(tcfg, "init")

    # supervision targets, their class balance and the CRF prior all use the
    # anticipation-shifted label sequences
    target_seqs = []
    for seq in train_videos:
        targets = shifted_targets(seq, tcfg)
        target_seqs.append(targets)
    counts = np.zeros(crf_mod.NUM_CLASSES)
    for targets in target_seqs:
        if targets is not None:
            counts += np.bincount(targets, minlength=crf_mod.NUM_CLASSES)
    if (counts <= 0).any():
        raise DataError(f"train split lacks a class after the shift: counts {counts.tolist()}")
    weights = class_weights(counts)

    frame = None
    if tcfg.frame_mode == "encoder":
        if base is not None and base.frame is not None:
            if frame_cfg is not None:
                _require_same_config("frame", base.frame_cfg, frame_cfg)
            frame_cfg = base.frame_cfg
            frame = TemporalEncoder(frame_cfg, params=_copy_params(base.frame.params),
                                    name="frame")
        else:
            if base is not None:
                raise CheckpointMismatchError("checkpoint has no frame encoder")
            if frame_cfg is None:
                raise ConfigError("scratch stage 3 needs a frame encoder config")
            frame = TemporalEncoder(frame_cfg, init_rng, name="frame")

    clip = None
    if tcfg.use_clip_encoder:
        if base is not None and base.clip is not None:
            if clip_cfg is not None:
                _require_same_config("clip", base.clip_cfg, clip_cfg)
            clip_cfg = base.clip_cfg
            clip = TemporalEncoder(clip_cfg, params=_copy_params(base.clip.params), name="clip")
        elif base is not None:
            raise CheckpointMismatchError(
                "stage 3 with a clip encoder needs a checkpoint that has one")
        else:
            if clip_cfg is None:
                raise ConfigError("scratch stage 3 needs a clip encoder config")
            clip = TemporalEncoder(clip_cfg, init_rng, name="clip")
    if clip_cfg is None and frame_cfg is None:
        raise ConfigError("gap mode without a clip encoder leaves nothing to train")
    model_dim = (clip_cfg or frame_cfg).model_dim
    if frame is not None and clip is not None and frame_cfg.model_dim != clip_cfg.model_dim:
        raise ConfigError("frame and clip encoders must share model_dim")

    trans = None
    if tcfg.use_crf:
        if tcfg.crf_mode == "prior":
            trans = crf_mod.build_transition_matrix(
                "prior", training_labels=[t for t in target_seqs if t is not None])
        elif tcfg.crf_mode == "binary":
            trans = crf_mod.build_transition_matrix("binary", allow_skip=tcfg.crf_allow_skip)
        else:
            trans = crf_mod.build_transition_matrix("trainable", rng=init_rng)

    model = Model(
        frame_cfg=frame_cfg if frame is not None else None,
        clip_cfg=clip_cfg if clip is not None else None,
        frame=frame, clip=clip,
        heads={"mlp3": init_head(model_dim, crf_mod.NUM_CLASSES, init_rng)},
        crf=trans,
        settings=_settings(tcfg),
    )

    trainables = {"head.mlp3.w": model.heads["mlp3"]["w"],
                  "head.mlp3.b": model.heads["mlp3"]["b"]}
    if frame is not None:
        if tcfg.freeze_frame:
            _freeze(frame.params)
        else:
            trainables.update(frame.params)
    if clip is not None:
        if tcfg.freeze_clip:
            _freeze(clip.params)
        else:
            trainables.update(clip.params)
    if trans is not None and trans.trainable:
        trainables["crf.table"] = trans.table

    usable = [(seq, targets) for seq, targets in zip(train_videos, target_seqs)
              if targets is not None]
    skipped_total = len(train_videos) - len(usable)
    if not usable:
        raise DataError("anticipation horizon leaves no supervised clips")

    opt = AdamW(trainables, lr=tcfg.lr_start, weight_decay=tcfg.weight_decay)
    drop_rng = _rng(tcfg, "dropout")
    total_steps = max(tcfg.epochs * math.ceil(len(usable) / tcfg.batch_size) - 1, 1)
    step = 0
    metrics = []

    for epoch in range(tcfg.epochs):
        data_rng = _rng(tcfg, "data", epoch)
        order = data_rng.permutation(len(usable))
        losses, correct, seen, pending = [], 0, 0, 0
        lr = cosine_lr(min(step, total_steps), total_steps, tcfg.lr_start, tcfg.lr_end)

        def flush():
            nonlocal pending, step, lr
            opt.step(lr=lr, grad_scale=1.0 / pending)
            opt.zero_grad()
            pending = 0
            step += 1
            lr = cosine_lr(min(step, total_steps), total_steps, tcfg.lr_start, tcfg.lr_end)

        for vi in order:
            seq, targets = usable[vi]
            emissions, _ = forward_emissions(model, seq, training=True, rng=drop_rng)
            used = (ad.slice_(emissions, np.s_[0:len(targets), :])
                    if len(targets) < emissions.shape[0] else emissions)
            if tcfg.use_crf:
                # sequence-level NLL, scaled by the mean class weight of the
                # ground-truth labels so rare classes still count more
                wbar = float(np.mean(weights[targets]))
                loss = ad.scale(crf_mod.nll_loss(targets, used, trans), wbar)
            else:
                loss = ad.cross_entropy(used, targets, weights=weights)
            loss.backward()
            losses.append(loss.item())
            if tcfg.use_crf:
                pred = crf_mod.viterbi(used.data, trans)
            else:
                pred = used.data.argmax(axis=1)
            correct += int((pred == targets).sum())
            seen += len(targets)
            pending += 1
            if pending == tcfg.batch_size:
                flush()
        if pending:
            flush()
        metrics.append(_metric(3, epoch, step, np.mean(losses),
                               correct / max(seen, 1), lr, skipped_total))
    return StageResult(model, metrics, skipped_total)


# -- checkpoints -----------------------------------------------------------


def save_model(path, model, stage, step=0):
    arrays = {}
    if model.frame is not None:
        arrays.update({k: t.data for k, t in model.frame.params.items()})
    if model.clip is not None:
        arrays.update({k: t.data for k, t in model.clip.params.items()})
    for name, h in model.heads.items():
        arrays[f"head.{name}.w"] = h["w"].data
        arrays[f"head.{name}.b"] = h["b"].data
    if model.crf is not None:
        arrays["crf.table"] = model.crf.table.data
    meta = {
        "stage": stage,
        "step": step,
        "config": {
            "frame": asdict(model.frame_cfg) if model.frame_cfg else None,
            "clip": asdict(model.clip_cfg) if model.clip_cfg else None,
            "heads": sorted(model.heads),
            "crf_mode": model.crf.mode if model.crf is not None else None,
            "settings": model.settings,
        },
    }
    data_mod.save_checkpoint(path, arrays, meta)


def load_model(path):
    """Rebuild a Model (and its stage tag) from a checkpoint file."""
    arrays, meta = data_mod.load_checkpoint(path)
    cfg = meta.get("config", {})

    def tensors(prefix):
        return {k: ad.Tensor(v, requires_grad=True)
                for k, v in arrays.items() if k.startswith(prefix)}

    frame_cfg = EncoderConfig(**cfg["frame"]) if cfg.get("frame") else None
    clip_cfg = EncoderConfig(**cfg["clip"]) if cfg.get("clip") else None
    frame = (TemporalEncoder(frame_cfg, params=tensors("frame."), name="frame")
             if frame_cfg else None)
    clip = (TemporalEncoder(clip_cfg, params=tensors("clip."), name="clip")
            if clip_cfg else None)
    heads = {}
    for name in cfg.get("heads", []):
        heads[name] = {"w": ad.Tensor(arrays[f"head.{name}.w"], requires_grad=True),
                       "b": ad.Tensor(arrays[f"head.{name}.b"], requires_grad=True)}
    trans = None
    if cfg.get("crf_mode"):
        mode = cfg["crf_mode"]
        trans = crf_mod.TransitionMatrix(
            ad.Tensor(arrays["crf.table"], requires_grad=(mode == "trainable")), mode)
    model = Model(frame_cfg=frame_cfg, clip_cfg=clip_cfg, frame=frame, clip=clip,
                  heads=heads, crf=trans, settings=dict(cfg.get("settings", {})))
    return model, meta
