"""Command-line entry point: one subcommand per pipeline stage plus the
accountant and the experiment grid.

Exit codes: 0 success, 2 usage or config error, 3 privacy violation,
4 transport error, 5 candidate shortage or exhausted source.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .augment import EPSILON_GRID, Pipeline, ShortageError
from .candidate_source import ShortResponseError, SourceExhausted, TransportError
from .config import ConfigError, RunConfig, apply_override, load_config
from .corpus import CorpusFormatError, IntegrityError
from .evaluation import ExperimentGrid, run_experiment
from .pate_kd import PrivacyViolation

log = logging.getLogger("dpaug")

EXIT_OK, EXIT_USAGE, EXIT_PRIVACY, EXIT_TRANSPORT, EXIT_SHORTAGE = 0, 2, 3, 4, 5

STAGES = ("ingest", "partition", "train-teachers", "distill", "tutor", "generate", "select", "run", "account")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _stage_options(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON run configuration (default: <out-dir>/config.resolved.json if present)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, dotted keys allowed (repeatable)")
    p.add_argument("--out-dir", help="run directory")
    p.add_argument("--private", dest="private_path", help="private corpus JSONL")
    p.add_argument("--public", dest="public_path", help="public corpus JSONL (teacher negatives)")
    p.add_argument("--labels", dest="labels_path", help="label vocabulary JSON array")
    p.add_argument("--teachers", type=_positive_int, help="number of teachers M")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--queries", type=_positive_int, help="student query budget Q")
    p.add_argument("--n-aug", type=_positive_int, help="augmented samples to select")
    p.add_argument("--oversample", type=float, help="candidates generated per quota slot")
    p.add_argument("--sigma-kd", type=_positive_float, help="KD noise scale (replaces the epsilon target)")
    p.add_argument("--epsilon-kd", type=float, help="KD epsilon target")
    p.add_argument("--sigma-tutor", type=_positive_float, help="tutor noise scale (replaces the epsilon target)")
    p.add_argument("--epsilon-tutor", type=float, help="tutor epsilon target")
    p.add_argument("--min-score", type=float, help="drop candidates scored below this")
    p.add_argument("--source", choices=["file", "http"], help="candidate source kind")
    p.add_argument("--pool", help="candidate corpus JSONL for the file source")
    p.add_argument("--endpoint", help="chat-completions URL for the http source")
    p.add_argument("--model", help="generator model name")
    p.add_argument("--api-key-env", help="environment variable holding the API key")
    p.add_argument("--cache-dir", help="response cache directory for the http source")
    p.add_argument("--rate-limit", type=_positive_int, help="requests per minute")
    p.add_argument("--template-file", help="prompt template with one [LABEL] placeholder")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpaug", description="Differentially private text augmentation")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        _stage_options(sub.add_parser(name))
    ev = sub.add_parser("eval", help="experiment grid")
    ev_sub = ev.add_subparsers(dest="eval_command", required=True)
    grid = ev_sub.add_parser("grid")
    grid.add_argument("--config", help="JSON experiment grid")
    grid.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    grid.add_argument("--out", required=True, help="output directory")
    return parser


def _flag_overrides(args) -> dict:
    d: dict = {}
    for key in ("out_dir", "private_path", "public_path", "labels_path", "teachers", "seed", "queries",
                "n_aug", "oversample", "min_score", "template_file"):
        value = getattr(args, key)
        if value is not None:
            d[key] = value
    if args.sigma_kd is not None:
        d["kd"] = {"sigma": args.sigma_kd, "epsilon": None}
    if args.epsilon_kd is not None:
        d["kd"] = {"epsilon": args.epsilon_kd, "sigma": None}
    if args.sigma_tutor is not None:
        d["tutor"] = {"sigma": args.sigma_tutor, "epsilon": None}
    if args.epsilon_tutor is not None:
        d["tutor"] = {"epsilon": args.epsilon_tutor, "sigma": None}
    source = {}
    for key, attr in (("kind", "source"), ("path", "pool"), ("endpoint", "endpoint"), ("model", "model"),
                      ("api_key_env", "api_key_env"), ("cache_dir", "cache_dir"), ("rate_limit", "rate_limit")):
        value = getattr(args, attr)
        if value is not None:
            source[key] = value
    if source:
        d["source"] = source
    return d


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(args) -> RunConfig:
    if args.config:
        raw = load_config(args.config)
    else:
        out_dir = args.out_dir or "run"
        resolved = Path(out_dir) / Pipeline.CONFIG
        raw = load_config(resolved) if resolved.exists() else {}
    raw = _merge(raw, _flag_overrides(args))
    for assignment in args.set:
        apply_override(raw, assignment)
    return RunConfig.from_dict(raw).resolved()


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def run_stage(name: str, pipe: Pipeline) -> dict:
    if name == "ingest":
        return pipe.ingest()
    if name == "partition":
        return {"shard_sizes": pipe.partition().sizes()}
    if name == "train-teachers":
        return {"teachers": pipe.train_teachers().M}
    if name == "distill":
        pipe.distill()
        return json.loads(pipe.path(pipe.DISTILL_REPORT).read_text())
    if name == "tutor":
        dist = pipe.tutor()
        return {"labels": dist.vocab.names, "probs": dist.probs.tolist(), "sigma_tutor": dist.sigma_tutor}
    if name == "generate":
        return {"candidates": len(pipe.generate())}
    if name == "select":
        data = pipe.select()
        return {"selected": len(data.records), "quota": data.quota.as_dict()}
    if name == "run":
        data, report = pipe.run()
        return {"selected": len(data.records), "budget": report["total"], "out_dir": str(pipe.dir)}
    if name == "account":
        return pipe.account(EPSILON_GRID)
    raise ValueError(f"unknown stage {name}")


def _eval_grid(args) -> dict:
    raw = load_config(args.config) if args.config else {}
    for assignment in args.set:
        apply_override(raw, assignment)
    try:
        grid = ExperimentGrid.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    result = run_experiment(grid, args.out)
    (Path(args.out) / "grid.json").write_text(json.dumps(asdict(grid), indent=2, sort_keys=True) + "\n")
    return {"points": len(result["points"]), "out": args.out}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            _emit(_eval_grid(args))
        else:
            pipe = Pipeline(resolve_config(args))
            _emit(run_stage(args.command, pipe))
        return EXIT_OK
    except (PrivacyViolation, IntegrityError) as exc:
        print(f"dpaug: privacy violation: {exc}", file=sys.stderr)
        return EXIT_PRIVACY
    except (TransportError, ShortResponseError) as exc:
        print(f"dpaug: transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (ShortageError, SourceExhausted) as exc:
        print(f"dpaug: shortage: {exc}", file=sys.stderr)
        return EXIT_SHORTAGE
    except (ConfigError, CorpusFormatError, FileNotFoundError, FileExistsError) as exc:
        print(f"dpaug: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
