"""Command-line interface covering every engine operation for scripted use.

Exit codes: 0 on success, 1 on a domain error (unknown element, phase misuse,
transcript drift, ...), 2 on a usage error. ``--json`` switches any command
from human-readable lines to deterministic JSON on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .config import ConfigInvalid, EngineConfig, load_engine_config
from .formulas import FormulaError, parse_formula, render_formula, molecular_weight
from .gateway import ComparatorCache, ComparatorFailure
from .metrics import (
    UnknownValence,
    formula_distance,
    preparation_complexity,
    theoretical_capacity,
    total_charge,
)
from .pipeline import (
    PipelineError,
    SessionConfig,
    dedup_candidates,
    rank_candidates,
    run_exploration,
    start_session,
)
from .store import AllRecordsMalformed, FileUnreadable, MockRegistryClient, Snapshot, load_snapshot

DOMAIN_ERRORS = (
    FormulaError,
    UnknownValence,
    PipelineError,
    ComparatorFailure,
    ConfigInvalid,
    FileUnreadable,
    AllRecordsMalformed,
    ValueError,
    RuntimeError,
    OSError,
)


def _emit(args: argparse.Namespace, payload: dict, human: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(human)


def _read_formula_lines(path: str) -> list:
    formulas = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.lower().startswith("formula"):
                continue
            formulas.append(parse_formula(line.split(",")[0].strip()))
    return formulas


def _backend_spec(arg: str | None) -> dict | None:
    if arg is None:
        return None
    if arg.startswith("scripted:"):
        return {"mode": "scripted", "transcript": arg[len("scripted:"):]}
    if arg == "live" or arg.startswith("live:"):
        spec = {"mode": "live"}
        if ":" in arg:
            spec["base_url"] = arg.split(":", 1)[1]
        return spec
    raise ConfigInvalid(f"--backend must be scripted:<path> or live[:<base_url>], got {arg!r}")


def _engine_config(args: argparse.Namespace) -> EngineConfig:
    config = load_engine_config(args.config) if getattr(args, "config", None) else EngineConfig.from_dict({})
    if getattr(args, "data_dir", None):
        config.data_dir = args.data_dir
    if getattr(args, "snapshot", None):
        config.snapshot_path = args.snapshot
    backend = _backend_spec(getattr(args, "backend", None))
    if backend is not None:
        config.backend = backend
    if getattr(args, "listen", None):
        host, _, port = args.listen.rpartition(":")
        config.host = host or "127.0.0.1"
        config.port = int(port)
    return config


# -- subcommands -------------------------------------------------------------

def cmd_parse(args) -> int:
    formula = parse_formula(args.formula)
    payload = {
        "formula": render_formula(formula),
        "composition": {s: c for s, c in formula.composition.items()},
        "species": len(formula.composition),
        "molecular_weight": molecular_weight(formula),
        "merged_duplicates": formula.merged_duplicates,
    }
    lines = [f"{s:<2}  {c:g}" for s, c in formula.composition.items()]
    _emit(args, payload, "\n".join(lines))
    return 0


def cmd_capacity(args) -> int:
    formula = parse_formula(args.formula)
    value = theoretical_capacity(formula)
    _emit(args, {"formula": render_formula(formula), "capacity_mah_g": value},
          f"{value:.2f} mAh/g")
    return 0


def cmd_charge(args) -> int:
    config = _engine_config(args)
    formula = parse_formula(args.formula)
    value = total_charge(formula, config.valence_table())
    _emit(args, {"formula": render_formula(formula), "total_charge_e": value},
          f"{value:+.6g} e")
    return 0


def cmd_distance(args) -> int:
    config = _engine_config(args)
    a = parse_formula(args.formula_a)
    b = parse_formula(args.formula_b)
    value = formula_distance(a, b, config.group_weights())
    _emit(args, {"a": render_formula(a), "b": render_formula(b), "distance": value},
          f"{value:g}")
    return 0


def cmd_dedup(args) -> int:
    formulas = _read_formula_lines(args.file)
    unique, removed = dedup_candidates(formulas, args.tau)
    payload = {
        "tau": args.tau,
        "unique": [render_formula(f) for f in unique],
        "removed": [render_formula(f) for f in removed],
    }
    human = "\n".join(
        [f"kept {len(unique)}, removed {len(removed)} (tau={args.tau})"]
        + [f"- {render_formula(f)}" for f in removed]
    )
    _emit(args, payload, human)
    return 0


def cmd_rank(args) -> int:
    config = _engine_config(args)
    formulas = _read_formula_lines(args.file)
    backend = config.build_backend()
    outcome = rank_candidates(
        formulas, backend, ComparatorCache(),
        valences=config.valence_table(), config=config.session_defaults,
    )
    payload = {"rank": outcome.to_dict()}
    top = outcome.voltage_ordered
    human = "\n".join(
        [
            f"stage A (|total charge|): {len(outcome.charge_ranked)} kept",
            f"stage B (complexity):     {len(outcome.complexity_filtered)} kept",
            f"stage C (voltage):        top {len(top)}",
        ]
        + [f"{i + 1}. {render_formula(f)}" for i, f in enumerate(top)]
    )
    _emit(args, payload, human)
    return 0


def cmd_explore(args) -> int:
    config = _engine_config(args)
    session_config = SessionConfig.from_dict({
        **config.session_defaults.to_dict(),
        **{k: v for k, v in {
            "k": args.k, "cycles": args.cycles, "trees": args.trees, "tau": args.tau,
            "max_rounds_per_cycle": args.max_rounds,
        }.items() if v is not None},
    })
    seed = parse_formula(args.seed)
    snapshot = config.build_snapshot()
    registry = config.build_registry()
    backend = config.build_backend()
    session = start_session(session_config, seed)
    records = run_exploration(session, backend, snapshot, registry)
    payload = {
        "seed": render_formula(seed),
        "config": session_config.to_dict(),
        "total": len(records),
        "candidates": [r.to_dict() for r in records],
    }
    human = "\n".join(
        [f"{len(records)} candidates from {session_config.trees} trees "
         f"x {session_config.k}^{session_config.cycles}"]
        + [f"- {render_formula(r.formula)}" for r in records]
    )
    _emit(args, payload, human)
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    config = _engine_config(args)
    serve(config)
    return 0


def cmd_snapshot_info(args) -> int:
    snapshot = load_snapshot(args.file)
    report = snapshot.report
    payload = {
        "records": len(snapshot),
        "malformed": len(report.malformed) if report else 0,
    }
    _emit(args, payload, f"{len(snapshot)} records "
          f"({payload['malformed']} malformed lines skipped)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cathodescout",
        description="LLM-guided lithium cathode screening engine",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_flags: bool = False) -> None:
        p.add_argument("--json", action="store_true", help="machine-readable output")
        if config_flags:
            p.add_argument("--config", help="engine config JSON file")
            p.add_argument("--data-dir", help="session data directory")
            p.add_argument("--snapshot", help="known-compound snapshot CSV")
            p.add_argument("--backend", help="scripted:<transcript.jsonl> or live[:<base_url>]")

    p = sub.add_parser("parse", help="parse a formula into element counts")
    p.add_argument("formula")
    common(p)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("capacity", help="theoretical capacity in mAh/g")
    p.add_argument("formula")
    common(p)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("charge", help="heuristic total charge in e")
    p.add_argument("formula")
    common(p, config_flags=True)
    p.set_defaults(func=cmd_charge)

    p = sub.add_parser("distance", help="weighted composition distance")
    p.add_argument("formula_a")
    p.add_argument("formula_b")
    common(p, config_flags=True)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("dedup", help="range-match dedup over a formula list file")
    p.add_argument("file")
    p.add_argument("--tau", type=float, default=0.1)
    common(p)
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("rank", help="three-stage funnel over a formula list file")
    p.add_argument("file")
    common(p, config_flags=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("explore", help="run exploration rounds to completion")
    p.add_argument("--seed", required=True)
    p.add_argument("-k", type=int, default=None, help="valid candidates per parent")
    p.add_argument("--cycles", type=int, default=None)
    p.add_argument("--trees", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--max-rounds", type=int, default=None)
    common(p, config_flags=True)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("snapshot-info", help="validate a snapshot file")
    p.add_argument("file")
    common(p)
    p.set_defaults(func=cmd_snapshot_info)

    p = sub.add_parser("serve", help="run the operator HTTP service")
    p.add_argument("--listen", help="host:port (default 127.0.0.1:8710)")
    common(p, config_flags=True)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DOMAIN_ERRORS as exc:
        print(f"error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
