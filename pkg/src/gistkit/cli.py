"""Command-line entry point: ``gistkit <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .pipeline import STAGES, RunConfig, StageError, run_pipeline
from .session import SessionError, loads_session, save_session, validate_session
from .synth import ConfigurationError, PhaseScript, generate, random_script, save_truth

logger = logging.getLogger("gistkit")

# command -> pipeline stages it runs
COMMAND_STAGES = {
    "sociogram": ("sociogram",),
    "metrics": ("metrics",),
    "features": ("features",),
    "train": ("train",),
    "cluster": ("train", "cluster"),
    "rules": ("rules",),
    "analyze": ("cluster", "rules", "analyze"),
    "run": STAGES,
}

# CLI flag -> RunConfig field
FLAG_FIELDS = {
    "window": "window",
    "stride": "stride",
    "min_speech": "min_speech",
    "min_gaze": "min_gaze",
    "max_prox": "max_prox",
    "grid_dt": "grid_dt",
    "k": "k",
    "lam": "lam",
    "seed": "seed",
    "fast_eval": "fast_eval_cap",
    "tier_mode": "tier_mode",
    "features_mode": "features",
    "pretrain_epochs": "pretrain_epochs",
    "epochs": "epochs",
    "per_window_alpha": "per_window_alpha",
}


# "auto" and "sweep" are kept as strings so they can override a config file
def _k(value: str) -> int | str:
    return "auto" if value == "auto" else int(value)


def _lam(value: str) -> float | str:
    return "sweep" if value == "sweep" else float(value)


def _global_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("analysis options (override --config)")
    g.add_argument("--config", type=Path, help="JSON file mirroring these options")
    g.add_argument("--window", type=float, help="window length in seconds (32)")
    g.add_argument("--stride", type=float, help="window stride in seconds (16)")
    g.add_argument("--min-speech", type=float, help="minimum speech overlap in seconds (0.5)")
    g.add_argument("--min-gaze", type=float, help="minimum joint-gaze overlap in seconds (0.013)")
    g.add_argument("--max-prox", type=float, help="proximity distance threshold in feet (1.5)")
    g.add_argument("--grid-dt", type=float, help="pose resampling interval in seconds (0.1)")
    g.add_argument("--k", type=_k, help="cluster count or 'auto'")
    g.add_argument("--lambda", dest="lam", type=_lam, help="clustering-loss weight or 'sweep'")
    g.add_argument("--seed", type=int)
    g.add_argument("--fast-eval", type=int, metavar="CAP", help="evaluation subsample cap (5000)")
    g.add_argument("--tier-mode", choices=("percentile", "fixed", "zscore"),
                   help="tier scheme; required by metrics, analyze and run")
    g.add_argument("--features", dest="features_mode", choices=("prune", "default"))
    g.add_argument("--pretrain-epochs", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--per-window-alpha", action="store_true", default=None)
    g.add_argument("--out", type=Path, default=Path("gistkit-run"), help="run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gistkit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic session with ground truth")
    sp.add_argument("script", nargs="?", type=Path, help="phase script JSON")
    sp.add_argument("--group-size", type=int, default=4, help="random script group size")
    sp.add_argument("--phases", type=int, default=8, help="random script phase count")
    sp.add_argument("--seed", type=int, default=0, help="random script seed")
    sp.add_argument("-o", "--output", type=Path, required=True, help="session file to write")

    vp = sub.add_parser("validate", help="check session files against the data model")
    vp.add_argument("sessions", nargs="+", type=Path)

    for name in COMMAND_STAGES:
        cp = sub.add_parser(name, help=f"{name} stage" if name != "run" else "full pipeline")
        cp.add_argument("sessions", nargs="+", type=Path, help="session files or directories")
        cp.add_argument("--model", type=Path, help="model checkpoint (skips training)")
        cp.add_argument("--skip-train", action="store_true", help="require --model instead of training")
        _global_flags(cp)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base: dict = {}
    if args.config is not None:
        base = json.loads(args.config.read_text(encoding="utf-8"))
        if not isinstance(base, dict):
            raise ValueError("config file must hold a JSON object")
    for flag, name in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            base[name] = value
    for name, word in (("k", "auto"), ("lam", "sweep")):
        if base.get(name) == word:
            base[name] = None
    return RunConfig.from_json(base)


def _tier_mode_given(args: argparse.Namespace) -> bool:
    if args.tier_mode is not None:
        return True
    if args.config is None:
        return False
    return "tier_mode" in json.loads(args.config.read_text(encoding="utf-8"))


def _synth(args) -> int:
    if args.script is not None:
        script = PhaseScript.load(args.script)
    else:
        script = random_script(args.group_size, args.seed, n_phases=args.phases,
                               session_id=args.output.name.split(".")[0])
    session, truth = generate(script)
    save_session(session, args.output)
    name = args.output.name
    stem = name[: -len(".jsonl")] if name.endswith(".jsonl") else args.output.stem
    save_truth(truth, args.output.with_name(stem + ".truth.csv"))
    print(f"wrote {args.output} ({script.duration:.0f} s, {len(truth)} labelled dyad-windows)")
    return 0


def _validate(args) -> int:
    status = 0
    for path in args.sessions:
        try:
            s = loads_session(path.read_text(encoding="utf-8"), validate=False)
        except SessionError as exc:
            print(f"{path}: {exc}")
            status = 2
            continue
        problems = validate_session(s)
        if problems:
            status = max(status, 1)
            for v in problems:
                print(f"{path}: {v}")
        else:
            print(f"{path}: ok")
    return status


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            return _synth(args)
        if args.command == "validate":
            return _validate(args)
        cfg = resolve_config(args)
        if {"metrics", "analyze"} & set(COMMAND_STAGES[args.command]) and not _tier_mode_given(args):
            # percentile and z-score tiers can disagree; the caller has to pick one
            raise ValueError("--tier-mode is required (percentile, fixed or zscore)")
        if args.skip_train and args.model is None:
            raise ValueError("--skip-train needs --model")
        stages = set(COMMAND_STAGES[args.command])
        if args.model is not None:
            stages.discard("train")
        if args.command == "analyze" and args.model is None:
            stages.add("train")
        report = run_pipeline(args.sessions, args.out, cfg, stages=stages, model_path=args.model)
    except (StageError, ConfigurationError, SessionError, ValueError, OSError) as exc:
        print(f"gistkit: error: {exc}", file=sys.stderr)
        return 1
    print(f"run directory: {report.out}")
    if report.k is not None:
        print(f"clusters: k={report.k}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
