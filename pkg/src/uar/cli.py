"""Command-line entry point.

Subcommands: synth (generate a corpus), train (one stage), eval (score a
checkpoint), ablate (sweep one axis and tabulate accuracy). Exit codes:
0 success, 2 configuration problem, 3 data problem, 4 checkpoint mismatch.
Seed precedence: --seed flag over UAR_SEED env var over the config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import tasks as tasks_mod
from .crf import transition_to_json
from .data import SyntheticSpec, load_corpus, synthesize, write_corpus
from .encoder import EncoderConfig
from .errors import CheckpointMismatchError, ConfigError, DataError
from .pipeline import (TrainConfig, load_model, run_stage1, run_stage2,
                       run_stage3, save_model)

ABLATION_AXES = {
    "window": ("4", "8", "16", "32"),
    "depth": ("1", "2", "3"),
    "transforms": ("none", "speed_up", "random_point_speed_up", "double_flip",
                   "shuffle", "warp"),
    "crf-mode": ("binary", "prior", "trainable", "none"),
    "stage1": ("frame-encoder", "gap", "skip"),
}


@dataclasses.dataclass
class RunConfig:
    seed: int
    corpus: SyntheticSpec
    frame_cfg: EncoderConfig
    clip_cfg: EncoderConfig
    stages: dict
    eval: dict


def _check_keys(section, obj, allowed):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"[{section}]: unknown keys {sorted(unknown)}; "
                          f"valid keys are {sorted(allowed)}")


def _field_names(cls):
    return {f.name for f in dataclasses.fields(cls)}


def load_config(path):
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None

    _check_keys("<top>", doc, {"run", "corpus", "frame_encoder", "clip_encoder",
                               "train", "stage1", "stage2", "stage3", "eval"})
    run_sec = doc.get("run", {})
    _check_keys("run", run_sec, {"seed"})
    seed = int(run_sec.get("seed", 0))
    if os.environ.get("UAR_SEED"):
        try:
            seed = int(os.environ["UAR_SEED"])
        except ValueError:
            raise ConfigError(f"UAR_SEED must be an integer, got "
                              f"{os.environ['UAR_SEED']!r}") from None

    corpus_sec = dict(doc.get("corpus", {}))
    _check_keys("corpus", corpus_sec, _field_names(SyntheticSpec) - {"seed"})
    for key in ("len_range", "transition_range"):
        if key in corpus_sec:
            corpus_sec[key] = tuple(corpus_sec[key])
    try:
        spec = SyntheticSpec(seed=seed, **corpus_sec)
    except DataError as exc:
        raise ConfigError(f"[corpus]: {exc}") from None

    encoders = {}
    for name in ("frame_encoder", "clip_encoder"):
        sec = doc.get(name, {})
        _check_keys(name, sec, _field_names(EncoderConfig))
        try:
            encoders[name] = EncoderConfig(**sec)
        except Exception as exc:
            raise ConfigError(f"[{name}]: {exc}") from None

    train_keys = _field_names(TrainConfig) - {"stage", "seed"}
    base = dict(doc.get("train", {}))
    _check_keys("train", base, train_keys)
    stages = {}
    for k in (1, 2, 3):
        sec = dict(doc.get(f"stage{k}", {}))
        _check_keys(f"stage{k}", sec, train_keys)
        stages[k] = {**base, **sec}

    eval_sec = dict(doc.get("eval", {}))
    _check_keys("eval", eval_sec, {"tau_l", "tau_a", "loc_mode"})
    eval_cfg = {
        "tau_l": tuple(eval_sec.get("tau_l", (0.25, 1.0))),
        "tau_a": float(eval_sec.get("tau_a", 1.5)),
        "loc_mode": eval_sec.get("loc_mode", "emission"),
    }
    return RunConfig(seed=seed, corpus=spec, frame_cfg=encoders["frame_encoder"],
                     clip_cfg=encoders["clip_encoder"], stages=stages, eval=eval_cfg)


def train_config(run, stage, **overrides):
    merged = {**run.stages.get(stage, {}), "seed": run.seed, **overrides, "stage": stage}
    if "transform_exclude" in merged:
        merged["transform_exclude"] = tuple(merged["transform_exclude"])
    try:
        return TrainConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _apply_seed_flag(run, args):
    if getattr(args, "seed", None) is not None:
        run = dataclasses.replace(run, seed=args.seed)
    run.corpus = dataclasses.replace(run.corpus, seed=run.seed)
    return run


def _run_dir(out, run_id, force):
    d = Path(out) / run_id
    markers = ("metrics.jsonl", "reports.jsonl", "ablation.csv", "checkpoint.bin")
    if not force and d.exists() and any((d / m).exists() for m in markers):
        raise DataError(f"{d} already has outputs; pass --force to overwrite")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# -- commands --------------------------------------------------------------


def cmd_synth(args):
    run = _apply_seed_flag(load_config(args.config), args)
    corpus = synthesize(run.corpus)
    manifest = write_corpus(corpus, args.out, force=args.force)
    print(f"wrote {len(corpus)} videos to {manifest}")
    return 0


def _load_base(args, stage):
    if args.scratch:
        return None
    if not getattr(args, "from_ckpt", None):
        raise ConfigError(f"stage {stage} needs --from <checkpoint> or --scratch")
    base, meta = load_model(args.from_ckpt)
    prev = meta.get("stage")
    wanted = (1,) if stage == 2 else (1, 2)
    if prev not in wanted:
        raise CheckpointMismatchError(
            f"stage {stage} expects a checkpoint from stage {' or '.join(map(str, wanted))}, "
            f"got stage {prev}")
    return base


def cmd_train(args):
    run = _apply_seed_flag(load_config(args.config), args)
    corpus = load_corpus(args.corpus)
    stage = args.stage
    tcfg = train_config(run, stage)
    run_id = args.run_id or f"train-stage{stage}-seed{run.seed}"
    out = _run_dir(args.out, run_id, args.force)

    if stage == 1:
        result = run_stage1(corpus, run.frame_cfg, tcfg)
    elif stage == 2:
        base = _load_base(args, 2)
        result = run_stage2(corpus, run.clip_cfg, tcfg, base=base,
                            frame_cfg=run.frame_cfg)
    else:
        base = _load_base(args, 3)
        result = run_stage3(corpus, tcfg, base=base,
                            frame_cfg=run.frame_cfg, clip_cfg=run.clip_cfg)

    ckpt = out / "checkpoint.bin"
    save_model(ckpt, result.model, stage=stage,
               step=result.metrics[-1]["step"] if result.metrics else 0)
    _write_jsonl(out / "metrics.jsonl", result.metrics)
    if result.model.crf is not None:
        (out / "transition.json").write_text(
            json.dumps(transition_to_json(result.model.crf), sort_keys=True) + "\n")
    for rec in result.metrics:
        print(f"stage {rec['stage']} epoch {rec['epoch']}: "
              f"loss {rec['loss']:.4f} acc {rec['accuracy']:.4f}")
    print(f"checkpoint: {ckpt}")
    return 0


def _eval_all(model, corpus, eval_cfg):
    return {
        "classification": tasks_mod.evaluate_classification(model, corpus),
        "localization": tasks_mod.evaluate_localization(
            model, corpus, thresholds=eval_cfg["tau_l"], mode=eval_cfg["loc_mode"]),
        "anticipation": tasks_mod.evaluate_anticipation(
            model, corpus, tau_a=eval_cfg["tau_a"]),
    }


def cmd_eval(args):
    eval_cfg = (load_config(args.config).eval if args.config
                else {"tau_l": (0.25, 1.0), "tau_a": 1.5, "loc_mode": "emission"})
    if args.tau_a is not None:
        eval_cfg["tau_a"] = args.tau_a
    corpus = load_corpus(args.corpus)
    model, meta = load_model(args.ckpt)
    if not model.heads.get("mlp3"):
        raise CheckpointMismatchError(
            f"checkpoint is from stage {meta.get('stage')}; evaluation needs a stage-3 model")
    run_id = args.run_id or f"eval-stage{meta.get('stage')}"
    out = _run_dir(args.out, run_id, args.force)

    reports = _eval_all(model, corpus, eval_cfg)
    _write_jsonl(out / "reports.jsonl",
                 [{"task": name, **dataclasses.asdict(rep)} for name, rep in reports.items()])
    (out / "summary.csv").write_text(tasks_mod.summary_csv([("model", reports)]))
    if model.crf is not None:
        (out / "transition.json").write_text(
            json.dumps(transition_to_json(model.crf), sort_keys=True) + "\n")
    cls, loc, ant = (reports[k] for k in ("classification", "localization", "anticipation"))
    print(f"classification accuracy: {cls.accuracy:.4f}")
    for tau, acc in loc.threshold_accuracy.items():
        print(f"localization accuracy @ {tau}s: {acc:.4f}")
    print(f"anticipation accuracy (tau={ant.tau_a:g}s): {ant.accuracy:.4f}")
    return 0


def _stages12(corpus, run, frame_cfg, clip_cfg, exclude, stage1_mode):
    if stage1_mode == "frame-encoder":
        s1 = run_stage1(corpus, frame_cfg,
                        train_config(run, 1, transform_exclude=exclude))
        return run_stage2(corpus, clip_cfg,
                          train_config(run, 2, transform_exclude=exclude),
                          base=s1.model).model
    if stage1_mode == "skip":
        return run_stage2(corpus, clip_cfg,
                          train_config(run, 2, transform_exclude=exclude),
                          base=None, frame_cfg=frame_cfg).model
    # gap: no frame encoder anywhere
    return run_stage2(corpus, clip_cfg,
                      train_config(run, 2, transform_exclude=exclude, frame_mode="gap"),
                      base=None).model


def _full_pipeline(corpus, run, frame_cfg=None, clip_cfg=None, exclude=(),
                   stage1_mode="frame-encoder", stage3_overrides=None):
    frame_cfg = frame_cfg or run.frame_cfg
    clip_cfg = clip_cfg or run.clip_cfg
    base = _stages12(corpus, run, frame_cfg, clip_cfg, exclude, stage1_mode)
    overrides = dict(stage3_overrides or {})
    if stage1_mode == "gap":
        overrides["frame_mode"] = "gap"
    return run_stage3(corpus, train_config(run, 3, **overrides), base=base).model


def cmd_ablate(args):
    run = _apply_seed_flag(load_config(args.config), args)
    corpus = load_corpus(args.corpus)
    axis = args.axis
    grid = ABLATION_AXES[axis]
    values = args.values.split(",") if args.values else list(grid)
    for v in values:
        if v not in grid:
            raise ConfigError(f"axis {axis} accepts {grid}, got {v!r}")
    out = _run_dir(args.out, args.run_id or f"ablate-{axis}-seed{run.seed}", args.force)

    rows = []
    if axis == "crf-mode":
        base = _stages12(corpus, run, run.frame_cfg, run.clip_cfg, (), "frame-encoder")
        for v in values:
            overrides = {"use_crf": False} if v == "none" else {"crf_mode": v}
            model = run_stage3(corpus, train_config(run, 3, **overrides), base=base).model
            rows.append((v, _eval_all(model, corpus, run.eval)))
    else:
        for v in values:
            kwargs = {}
            if axis == "window":
                w = int(v)
                kwargs["frame_cfg"] = dataclasses.replace(run.frame_cfg, window=w)
                kwargs["clip_cfg"] = dataclasses.replace(run.clip_cfg, window=w)
            elif axis == "depth":
                d = int(v)
                kwargs["frame_cfg"] = dataclasses.replace(run.frame_cfg, depth=d)
                kwargs["clip_cfg"] = dataclasses.replace(run.clip_cfg, depth=d)
            elif axis == "transforms":
                kwargs["exclude"] = () if v == "none" else (v,)
            elif axis == "stage1":
                kwargs["stage1_mode"] = v
            model = _full_pipeline(corpus, run, **kwargs)
            rows.append((str(v), _eval_all(model, corpus, run.eval)))

    csv_text = tasks_mod.summary_csv(rows)
    (out / "ablation.csv").write_text(csv_text)
    _write_jsonl(out / "reports.jsonl",
                 [{"variant": name, "task": task, **dataclasses.asdict(rep)}
                  for name, reports in rows for task, rep in reports.items()])
    print(csv_text, end="")
    return 0


# -- parser ----------------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(prog="uar",
                                     description="unintentional-action recognition lab")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic corpus")
    synth.add_argument("--config", required=True)
    synth.add_argument("--out", required=True)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--force", action="store_true")
    synth.set_defaults(fn=cmd_synth)

    train = sub.add_parser("train", help="run one training stage")
    train.add_argument("--config", required=True)
    train.add_argument("--corpus", required=True, help="path to manifest.json")
    train.add_argument("--stage", type=int, required=True, choices=(1, 2, 3))
    train.add_argument("--from", dest="from_ckpt", help="previous-stage checkpoint")
    train.add_argument("--scratch", action="store_true",
                       help="skip pretraining transfer (random init)")
    train.add_argument("--out", required=True)
    train.add_argument("--run-id")
    train.add_argument("--seed", type=int)
    train.add_argument("--force", action="store_true")
    train.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a stage-3 checkpoint")
    ev.add_argument("--config")
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--run-id")
    ev.add_argument("--tau-a", type=float, dest="tau_a")
    ev.add_argument("--force", action="store_true")
    ev.set_defaults(fn=cmd_eval)

    ab = sub.add_parser("ablate", help="sweep one design axis")
    ab.add_argument("--config", required=True)
    ab.add_argument("--corpus", required=True)
    ab.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    ab.add_argument("--values", help="comma-separated subset of the axis grid")
    ab.add_argument("--out", required=True)
    ab.add_argument("--run-id")
    ab.add_argument("--seed", type=int)
    ab.add_argument("--force", action="store_true")
    ab.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CheckpointMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
