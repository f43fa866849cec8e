"""Command-line entry point: ``python -m echotrail <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .core import dumps
from .experiments import (ExperimentSpec, embeddings_csv, quality_over_time, read_results,
                          run_ablation, run_suite, sweep_k, write_results)
from .exploration import ExplorerConfig, read_log, run_exploration
from .memory import MemoryDB
from .metrics import compute_metrics
from .retrieval import MODES, RetrievalConfig
from .sim import SimEnv, Suite


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _int_list(value: str) -> list[int]:
    try:
        return [int(x) for x in value.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}")


def _env(path: Optional[str]) -> SimEnv:
    return SimEnv(Suite.load(path))


def _write(path: Optional[str], text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")


def cmd_explore(args) -> int:
    env = _env(args.suite)
    cfg = ExplorerConfig(N=args.episodes, seed=args.seed, guidance_enabled=args.guidance,
                         gate_enabled=not args.no_gate)
    db = MemoryDB(args.db, theta_good=cfg.theta_good, enforce_gate=cfg.gate_enabled)
    run = run_exploration(cfg, env, d_mem=db)
    db.persist(args.db)
    log = args.log or f"{args.db}.episodes.jsonl"
    run.write_log(log)
    kept = sum(1 for e in run.episodes if e.admission == "inserted")
    print(f"explored {len(run.episodes)} episodes, {kept} records in {args.db}, log {log}")
    return 0


def cmd_run(args) -> int:
    env = _env(args.suite)
    db = MemoryDB.load(args.db) if args.db else None
    cfg = RetrievalConfig(alpha=args.alpha, K=args.k, mode=args.mode)
    tasks = args.tasks.split(",") if args.tasks else None
    results = run_suite(db, cfg, args.seed, env, tasks)
    write_results(results, args.out)
    wins = sum(r.success for r in results)
    print(f"ran {len(results)} tasks, {wins} succeeded, results in {args.out}")
    return 0


def cmd_eval(args) -> int:
    results = read_results(args.results)
    report = compute_metrics(results, Suite.load(args.suite))
    _write(args.out, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    o = report.overall
    print(f"SR {o.sr:.2f}  Sub-SR {o.sub_sr:.2f}  RRR {o.rrr:.2f}  ROR {o.ror:.2f}",
          file=sys.stderr if args.out is None else sys.stdout)
    return 0


def cmd_ablate(args) -> int:
    spec = ExperimentSpec.load(args.spec) if args.spec else ExperimentSpec()
    out = args.out or spec.out_dir
    reports = run_ablation(spec, out_dir=out)
    for v, r in reports.items():
        print(f"{v:18s} SR {r.sr:6.2f}  Sub-SR {r.sub_sr:6.2f}  RRR {r.rrr:6.2f}  ROR {r.ror:6.2f}")
    print(f"wrote {Path(out) / 'ablation.json'} and {Path(out) / 'ablation.csv'}")
    return 0


def cmd_sweep_k(args) -> int:
    base = ExperimentSpec.load(args.spec) if args.spec else ExperimentSpec()
    spec = ExperimentSpec.from_dict({**base.to_dict(), "ks": args.ks,
                                     **({"seeds": args.seeds} if args.seeds else {}),
                                     **({"episodes": args.episodes} if args.episodes else {})})
    out = args.out or spec.out_dir
    reports = sweep_k(spec, out_dir=out)
    for k, r in reports.items():
        print(f"K={k:<3d} SR {r.sr:6.2f}")
    print(f"wrote {Path(out) / 'sweep_k.csv'}")
    return 0


def cmd_stage_quality(args) -> int:
    q = quality_over_time(read_log(p) for p in args.log)
    _write(args.out, q.to_csv())
    if args.per_app:
        _write(args.per_app, dumps(q.per_app()) + "\n")
    return 0


def cmd_export_embeddings(args) -> int:
    _write(args.out, embeddings_csv(MemoryDB.load(args.db)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="echotrail", description="Explore, remember and replay GUI tasks.")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("explore", help="run critic-gated exploration and persist the memory DB")
    e.add_argument("--episodes", type=int, default=200)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--guidance", type=_on_off, default=True, metavar="on|off")
    e.add_argument("--db", required=True)
    e.add_argument("--log", help="episode log path (default: <db>.episodes.jsonl)")
    e.add_argument("--no-gate", action="store_true", help="insert every trajectory")
    e.add_argument("--suite")
    e.set_defaults(func=cmd_explore)

    r = sub.add_parser("run", help="run the task suite with retrieved memories")
    r.add_argument("--db", help="memory DB (omit for the memory-free baseline)")
    r.add_argument("--k", type=int, default=2)
    r.add_argument("--alpha", type=float, default=0.5)
    r.add_argument("--mode", choices=MODES, default="hybrid")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--tasks", help="comma-separated task ids (default: all)")
    r.add_argument("--out", required=True)
    r.add_argument("--suite")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("eval", help="compute SR, Sub-SR, RRR and ROR for a results file")
    v.add_argument("--results", required=True)
    v.add_argument("--suite")
    v.add_argument("--out")
    v.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run the ablation variants described by a spec file")
    a.add_argument("--spec")
    a.add_argument("--out", help="output directory (default: the spec's out_dir)")
    a.set_defaults(func=cmd_ablate)

    k = sub.add_parser("sweep-k", help="success rate against the number of retrieved memories")
    k.add_argument("--ks", type=_int_list, default=[0, 1, 2, 4, 8])
    k.add_argument("--seeds", type=_int_list)
    k.add_argument("--episodes", type=int)
    k.add_argument("--spec")
    k.add_argument("--out")
    k.set_defaults(func=cmd_sweep_k)

    s = sub.add_parser("stage-quality", help="high-quality rate per exploration stage and app")
    s.add_argument("--log", required=True, nargs="+", help="one or more episode logs to pool")
    s.add_argument("--out", help="CSV path (default: stdout)")
    s.add_argument("--per-app", help="also write per-app stage rates as JSON")
    s.set_defaults(func=cmd_stage_quality)

    x = sub.add_parser("export-embeddings", help="dump record intent embeddings as CSV")
    x.add_argument("--db", required=True)
    x.add_argument("--out", help="CSV path (default: stdout)")
    x.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
