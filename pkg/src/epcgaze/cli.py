"""Command-line entry point: ``epcgaze <subcommand> [options]``.

Every subcommand accepts ``--config FILE``, ``--seed N``, ``--out DIR`` and
one ``--kebab-case`` flag per configuration field.  Flags override the file,
which overrides the defaults.  Each run writes ``config.ini`` (the resolved
configuration) into its output directory.

Failures print a single line ``error: <ErrorClass>: <message>`` to stderr
and exit with status 2 for configuration and input problems, 1 otherwise.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import evaluation
from .config import RunConfig, dump_config, load_config, parse_value
from .errors import ConfigError, EpcGazeError, InvalidInput, UnknownSubject
from .model import Model, load_checkpoint, save_checkpoint
from .seeding import derive_rng
from .synthetic import (
    LabeledDomain,
    generate_world,
    leave_one_subject_out,
    read_dataset,
    write_dataset,
)
from .trainer import adapt, pretrain

log = logging.getLogger("epcgaze")

_INPUT_ERRORS = (ConfigError, InvalidInput, UnknownSubject, FileNotFoundError)


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="INI config file")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    group = p.add_argument_group("configuration overrides")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        group.add_argument(flag, dest=f"cfg_{f.name}", metavar="VALUE",
                           help=f.metadata.get("help") or None)


def _resolve(args) -> RunConfig:
    overrides = {}
    for f in fields(RunConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            overrides[f.name] = parse_value(f.name, raw)
    return load_config(args.config, **overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _world(cfg: RunConfig):
    if cfg.data:
        return read_dataset(cfg.data)
    return generate_world(cfg.generator_config(), seed=cfg.seed)


def _subject_arg(p):
    p.add_argument("--held-out", type=int, dest="held_out", metavar="ID",
                   help="held-out (target) subject id")


def _need_subject(args) -> int:
    if args.held_out is None:
        raise ConfigError("--held-out is required for this subcommand")
    return args.held_out


# ---------------------------------------------------------------- subcommands

def cmd_generate(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    world = generate_world(cfg.generator_config(), seed=cfg.seed)
    data, meta = write_dataset(world, out / "dataset.csv")
    dump_config(cfg, out / "config.ini")
    print(f"wrote {data} ({len(world)} samples) and {meta}")
    return 0


def cmd_pretrain(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    world = _world(cfg)
    sid = args.held_out
    if sid is None:
        source = LabeledDomain(world.features, world.gaze, world.subject_ids)
        stream = "all"
    else:
        source = leave_one_subject_out(world, sid).source
        stream = sid
    model = Model.create(cfg.model_config(), derive_rng(cfg.seed, "init", stream))
    rng = derive_rng(cfg.seed, "pretrain", stream)
    model, train_log = pretrain(model, source, cfg.train_config(), rng)
    model.rng_state = rng.bit_generator.state
    ck = save_checkpoint(model, out / "pretrained.json")
    train_log.write_csv(out / "pretrain_log.csv")
    dump_config(cfg, out / "config.ini")
    print(f"wrote {ck}")
    return 0


def cmd_adapt(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    sid = _need_subject(args)
    model = load_checkpoint(args.checkpoint)
    split = leave_one_subject_out(_world(cfg), sid)
    ck_dir = out / "checkpoints"

    def on_step(m, it):
        if cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            save_checkpoint(m, ck_dir / f"adapt_{it:06d}.json")

    rng = derive_rng(cfg.seed, "adapt", sid)
    model, train_log = adapt(model, split.source, split.target, cfg.train_config(), rng,
                             on_step=on_step)
    model.rng_state = rng.bit_generator.state
    ck = save_checkpoint(model, out / "adapted.json")
    train_log.write_csv(out / "adapt_log.csv")
    dump_config(cfg, out / "config.ini")
    print(f"wrote {ck}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    sid = _need_subject(args)
    model = load_checkpoint(args.checkpoint)
    split = leave_one_subject_out(_world(cfg), sid)
    pred = model.predict(split.target.features)
    report = evaluation.report_from_predictions(pred, split.target_gt, sid)
    evaluation.write_report(report, out / f"report_subject{sid:02d}.json",
                            checkpoint=str(args.checkpoint), stage=model.stage)
    evaluation.write_scatter(out / f"scatter_subject{sid:02d}.csv", split.target_gt, pred)
    dump_config(cfg, out / "config.ini")
    print(json.dumps(report.to_dict()))
    return 0


def cmd_loso(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    summary = evaluation.run_loso(_world(cfg), cfg, cfg.subjects)
    evaluation.write_loso_outputs(summary, out)
    dump_config(cfg, out / "config.ini")
    print(json.dumps(summary.stats()))
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    axis = args.axis
    if axis not in evaluation.ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}")
    key = evaluation.ABLATION_AXES[axis]
    values = [parse_value(key, v) for v in args.values.split(",") if v.strip()]
    results = evaluation.ablation_sweep(_world(cfg), axis, values, cfg, cfg.subjects)
    for value, summary in results:
        evaluation.write_loso_outputs(summary, out / f"{axis}={value}")
    table = evaluation.write_ablation_table(axis, results, out / f"ablation_{axis}.csv")
    dump_config(cfg, out / "config.ini")
    print(f"wrote {table}")
    return 0


def cmd_inspect(args, cfg: RunConfig) -> int:
    model = load_checkpoint(args.checkpoint)
    stats = {}
    for name, arr in zip(model.params.names(), model.params.arrays()):
        stats[name] = {"shape": list(arr.shape), "mean": float(arr.mean()),
                       "std": float(arr.std()), "min": float(arr.min()),
                       "max": float(arr.max())}
    doc = {"stage": model.stage, "model_config": {f.name: getattr(model.config, f.name)
                                                  for f in fields(model.config)},
           "parameters": stats}
    print(json.dumps(doc, indent=1))
    return 0


COMMANDS = {
    "generate": (cmd_generate, "write a synthetic dataset and its metadata"),
    "pretrain": (cmd_pretrain, "source-only training; writes a checkpoint and log"),
    "adapt": (cmd_adapt, "domain adaptation to a held-out subject"),
    "evaluate": (cmd_evaluate, "error report and scatter data for a checkpoint"),
    "loso": (cmd_loso, "full leave-one-subject-out run"),
    "ablate": (cmd_ablate, "leave-one-subject-out run per value of one setting"),
    "inspect-checkpoint": (cmd_inspect, "print config, stage and parameter statistics"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epcgaze", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        if name == "inspect-checkpoint":
            p.add_argument("checkpoint", help="checkpoint file")
        if name in ("adapt", "evaluate"):
            p.add_argument("--checkpoint", required=True, help="checkpoint file to start from")
        if name in ("pretrain", "adapt", "evaluate"):
            _subject_arg(p)
        if name == "ablate":
            p.add_argument("--axis", required=True, choices=sorted(evaluation.ABLATION_AXES))
            p.add_argument("--values", required=True, help="comma-separated values")
        _add_config_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    try:
        cfg = _resolve(args)
        return fn(args, cfg)
    except _INPUT_ERRORS as exc:
        _report(exc)
        return 2
    except (EpcGazeError, OSError, ValueError, FloatingPointError) as exc:
        _report(exc)
        return 1


def _report(exc: BaseException):
    msg = " ".join(str(exc).split())
    print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
