"""Command-line front end: ``run``, ``verify`` and ``compare``.

Exit codes: 0 success, 2 invalid config or arguments, 3 a property check
failed, 4 training failed. Run directories live under ``$CREAMLAB_RUN_ROOT``
(default ``./runs``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigError, DataError, DomainError, TrainingError
from .pairs import dump_jsonl
from .consistency import CSV_HEADER
from .trainer import IterationSnapshot, TrainConfig, build_task, run_experiment
from . import verify as verify_mod

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_TRAINING = 0, 2, 3, 4
RUN_ROOT_ENV = "CREAMLAB_RUN_ROOT"

METRICS_HEADER = [
    "iteration", "label", "method", "proxy_accuracy", "mean_loss", "consistency_rate",
    "applied_c", "flip_rate", "n_records", "skipped",
]
COMPARE_METRICS = ("proxy_accuracy", "mean_loss", "consistency_rate")

log = logging.getLogger("creamlab")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def load_config(path) -> TrainConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("<file>", f"no such config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path} is not valid JSON ({exc})") from None
    return TrainConfig.from_dict(doc)


def metrics_rows(snaps: list[IterationSnapshot], method: str) -> list[list[str]]:
    rows = []
    for s in snaps:
        rows.append([
            s.iteration, s.label, method, _fmt(s.proxy_accuracy), _fmt(s.mean_loss),
            _fmt(s.consistency_rate), _fmt(s.applied_c), _fmt(s.flip_rate), len(s.records), s.skipped,
        ])
    return rows


def metrics_csv(snaps, method: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    w.writerows(metrics_rows(snaps, method))
    return buf.getvalue()


def consistency_csv(snaps) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", *CSV_HEADER])
    for s in snaps:
        if s.report is not None:
            for row in s.report.rows():
                w.writerow([s.iteration, *row])
    return buf.getvalue()


def snapshot_doc(s: IterationSnapshot) -> dict:
    return {
        "label": s.label,
        "proxy_accuracy": s.proxy_accuracy,
        "consistency_rate": s.consistency_rate,
        "applied_c": s.applied_c,
        "flip_rate": s.flip_rate,
        "skipped": s.skipped,
        "loss_trace": list(s.loss_trace),
        "consistency": None if s.report is None else s.report.summary(),
        "policy": s.policy.to_dict(),
    }


def write_run(run_dir: Path, config: TrainConfig, snaps) -> None:
    """Write config.json, metrics.csv, consistency.csv, pairs.jsonl and snapshots/."""
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n")
    (run_dir / "metrics.csv").write_text(metrics_csv(snaps, config.method))
    (run_dir / "consistency.csv").write_text(consistency_csv(snaps))
    (run_dir / "pairs.jsonl").write_text(
        "".join(dump_jsonl(s.records, {"iteration": s.iteration}) for s in snaps if s.records)
    )
    snap_dir = run_dir / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for s in snaps:
        (snap_dir / f"{s.label}.json").write_text(json.dumps(snapshot_doc(s)) + "\n")


def execute(config: TrainConfig, run_dir: Path) -> list[IterationSnapshot]:
    snaps = run_experiment(build_task(config), config)
    write_run(run_dir, config, snaps)
    return snaps


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def _arrow(delta: float) -> str:
    return "↑" if delta > 0 else "↓" if delta < 0 else "="


def compare_rows(runs: dict[str, list[IterationSnapshot]]) -> tuple[list[str], list[list[str]]]:
    """Long-format join: one row per (iteration, metric).

    Each run contributes its value, its delta against the first run and an
    arrow against its own previous iteration.
    """
    names = list(runs)
    by_iter = {n: {s.iteration: s for s in snaps} for n, snaps in runs.items()}
    common = sorted(set.intersection(*(set(d) for d in by_iter.values())))
    if any(len(d) != len(common) for d in by_iter.values()):
        log.warning("runs have different iteration counts; joining on iterations %s", common)
    header = ["iteration", "metric"]
    for n in names:
        header += [n, f"{n}_delta", f"{n}_trend"]
    rows = []
    for it in common:
        for metric in COMPARE_METRICS:
            base = getattr(by_iter[names[0]][it], metric)
            row = [it, metric]
            for n in names:
                value = getattr(by_iter[n][it], metric)
                prev = by_iter[n].get(it - 1)
                prev_value = None if prev is None else getattr(prev, metric)
                delta = None if value is None or base is None else value - base
                trend = "" if value is None or prev_value is None else _arrow(value - prev_value)
                row += [_fmt(value), _fmt(delta), trend]
            rows.append(row)
    return header, rows


def _run_names(paths) -> list[str]:
    names, seen = [], {}
    for p in paths:
        stem = Path(p).stem
        seen[stem] = seen.get(stem, 0) + 1
        names.append(stem if seen[stem] == 1 else f"{stem}_{seen[stem]}")
    return names


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _cmd_run(args) -> int:
    config = load_config(args.config)
    run_dir = run_root() / (args.name or Path(args.config).stem)
    snaps = execute(config, run_dir)
    final = snaps[-1]
    print(f"{config.method}: {final.label} proxy_accuracy={final.proxy_accuracy:.4f} -> {run_dir}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    results = verify_mod.run_suite(args.suite, seed=args.seed, corrupt_c_lambda=args.corrupt_c_lambda)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    for r in failed:
        print(f"failed: {r.name} (max error {r.max_error:.3e}, tolerance {r.tolerance:.1e})", file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


def _cmd_compare(args) -> int:
    if len(args.configs) < 2:
        raise ConfigError("configs", "compare needs at least two config files")
    configs = [load_config(p) for p in args.configs]
    runs = {}
    for name, config in zip(_run_names(args.configs), configs):
        runs[name] = execute(config, run_root() / name)
    header, rows = compare_rows(runs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="creamlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one config and write its run directory")
    p.add_argument("config")
    p.add_argument("--name", help="run directory name (default: config file stem)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify", help="run property suites against their oracles")
    p.add_argument("suite", choices=[*verify_mod.SUITES, "all"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt-c-lambda", action="store_true",
                   help="negative control: perturb the soft weight in the soft-label identity check")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("compare", help="run several configs and join their metrics")
    p.add_argument("configs", nargs="+")
    p.add_argument("--out", help="write the comparison CSV here instead of stdout")
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training failed at stage {exc.stage!r}: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except DataError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
