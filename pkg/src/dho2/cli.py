"""Command line entry point.

::

    dho2 run --config <path> [--trainer sgd|fosi|dho2] [--workers C] [--seed S] [--out DIR]
    dho2 report memory --in DIR [--sweep 1,2,4,8]
    dho2 report comm --in DIR

``--config`` also accepts a bundled preset name (``quadratic``,
``two-gaussians``). Exit status is 0 on success, 2 for usage errors and 3
when training aborted on a non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import PRESETS, apply_overrides, load_config
from .exceptions import ConfigError
from .harness import (
    EXIT_ABORTED,
    EXIT_OK,
    EXIT_USAGE,
    comm_report,
    format_checks,
    ledger_conserved,
    load_run,
    memory_report,
    reorth_passes,
    run_experiment,
    run_memory_table,
)
from .trainers import TRAINERS


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dho2", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one configuration and write its artifacts")
    run.add_argument("--config", required=True, help=f"config file, or one of {', '.join(PRESETS)}")
    run.add_argument("--trainer", choices=TRAINERS)
    run.add_argument("--workers", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (default: runs/<config>-<trainer>)")

    rep = sub.add_parser("report", help="accounting tables for a finished run")
    rep.add_argument("kind", choices=("memory", "comm"))
    rep.add_argument("--in", dest="run_dir", required=True, help="run directory")
    rep.add_argument("--sweep", help="comma-separated worker counts for a memory sweep at the run's n and m")
    return parser


def _run(args) -> int:
    cfg = apply_overrides(load_config(args.config), trainer=args.trainer, workers=args.workers, seed=args.seed)
    out = args.out or cfg.out or Path("runs") / f"{Path(args.config).stem}-{cfg.trainer}"
    outcome = run_experiment(cfg, out=out)
    s = outcome.summary
    if outcome.status == EXIT_ABORTED:
        print(f"aborted: {s['message']} (diagnostics in {outcome.out}/diagnostic.json)", file=sys.stderr)
        return EXIT_ABORTED
    print(f"trainer={s['trainer']} workers={s['workers']} epochs={s['epochs']} steps={s['steps']}")
    print(f"final_loss={s['final_loss']:.6g} final_acc={s['final_acc']}")
    if s["loss_target"] is not None:
        print(f"steps_to_target={s['steps_to_target']} (target {s['loss_target']:g})")
    print(f"artifacts: {outcome.out}")
    return EXIT_OK


def _report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"no run directory {run_dir}")
    if args.kind == "comm":
        ledger, summary = load_run(run_dir)
        checks = comm_report(ledger, summary)
        print(format_checks(checks))
        print(f"second Gram-Schmidt passes: {reorth_passes(ledger)}")
        print(f"ledger conserved (sent == received): {ledger_conserved(ledger)}")
        return EXIT_OK if all(c.ok for c in checks) else 1
    rows = run_memory_table(run_dir)
    if rows:
        print("rank d_slots expected ok")
        for r in rows:
            print(f"{r['rank']} {r['d_slots']} {r['expected']} {'yes' if r['ok'] else 'NO'}")
    else:
        print("run has no Lanczos refreshes")
    ok = all(r["ok"] for r in rows)
    if args.sweep:
        summary = json.loads((run_dir / "summary.json").read_text())
        if not summary.get("lanczos_iters"):
            raise ConfigError("the run has no Lanczos iteration count to sweep", field="sweep")
        try:
            sizes = [int(t) for t in args.sweep.split(",")]
        except ValueError:
            raise ConfigError(f"--sweep must be comma-separated integers, got {args.sweep!r}", field="sweep") from None
        report = memory_report(summary["n"], summary["lanczos_iters"], sizes)
        print(report.table())
        ok = ok and report.ok
    return EXIT_OK if ok else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _run(args) if args.command == "run" else _report(args)
    except ConfigError as exc:
        where = f" (field: {exc.field})" if exc.field else ""
        print(f"usage error: {exc}{where}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
