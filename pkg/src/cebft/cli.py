"""Command line: run / replay / sweep / analyze.

Exit codes: 0 success, 1 bad input (config or trace), 2 protocol invariant
violated (safety monitor trip, or a replay that does not reproduce).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from . import __version__
from .analysis import format_table1, sweep_rows, table1, trace_metrics
from .config import ConfigError, ScenarioConfig, from_dict, load_config
from .sim import Trace, run_scenario

OUT_ENV = "CEBFT_OUT"

log = logging.getLogger("cebft")


def _out_path(path: str | None, default_name: str | None = None) -> Path | None:
    base = os.environ.get(OUT_ENV)
    if path is None:
        if base is None or default_name is None:
            return None
        return Path(base) / default_name
    p = Path(path)
    if base is not None and not p.is_absolute():
        p = Path(base) / p
    return p


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if "honest-filter" in (getattr(args, "ablate", None) or []):
        changes["honest_filter"] = False
    return cfg.with_changes(**changes) if changes else cfg


def _report_config_error(exc: ConfigError) -> int:
    for path, reason in exc.diagnostics:
        print(f"config error: {path}: {reason}", file=sys.stderr)
    return 1


def cmd_run(args) -> int:
    try:
        cfg = _load(args)
    except ConfigError as exc:
        return _report_config_error(exc)
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 1
    trace = run_scenario(cfg)
    stem = Path(args.config).stem
    tpath = _out_path(args.trace, f"{stem}-s{cfg.seed}.trace.jsonl")
    if tpath is not None:
        _write(tpath, trace.to_jsonl())
    metrics = trace_metrics(trace).as_dict()
    metrics["summary"] = trace.summary
    mpath = _out_path(args.metrics)
    if mpath is not None:
        _write(mpath, json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    s = trace.summary
    print(f"rounds={s['rounds']} height={s['max_height']} fn_height={s['fn_height']} "
          f"violations={s['violations']} max_fork_depth={s['max_fork_depth']} "
          f"tree_fork_depth={s['max_tree_fork_depth']} "
          f"suspicious={s['suspicious_blocks']} skips={s['skips']}")
    if trace.violations:
        for v in trace.violations[:10]:
            print(f"VIOLATION r={v['r']} {v['what']}: {v['detail']}", file=sys.stderr)
        return 2
    return 0


def cmd_replay(args) -> int:
    try:
        text = Path(args.trace).read_text(encoding="utf-8")
        old = Trace.parse(text)
        cfg = from_dict(old.header["config"])
    except (OSError, ValueError, KeyError) as exc:
        print(f"cannot load trace: {exc}", file=sys.stderr)
        return 1
    if old.header.get("config_hash") != cfg.digest():
        print("trace header config hash does not match its config", file=sys.stderr)
        return 1
    if old.header.get("version") != __version__:
        print(f"note: trace written by version {old.header.get('version')}, replaying with {__version__}",
              file=sys.stderr)
    new = run_scenario(cfg).to_jsonl()
    if new == text:
        print("traces identical")
        return 0
    a, b = text.splitlines(), new.splitlines()
    for i, (x, y) in enumerate(zip(a, b), 1):
        if x != y:
            print(f"traces differ at line {i}:\n- {x[:200]}\n+ {y[:200]}")
            break
    else:
        print(f"traces differ in length: {len(a)} vs {len(b)} lines")
    return 2


def _parse_value(v: str):
    return yaml.safe_load(v)


def _sweep_one(data: dict) -> dict:
    cfg = from_dict(data)
    tr = run_scenario(cfg)
    return {"summary": tr.summary, "violations": len(tr.violations)}


def cmd_sweep(args) -> int:
    try:
        base = _load(args)
    except ConfigError as exc:
        return _report_config_error(exc)
    axes = []
    for spec in args.vary or []:
        if "=" not in spec:
            print(f"bad --vary {spec!r}: expected key=a,b,c", file=sys.stderr)
            return 1
        key, vals = spec.split("=", 1)
        axes.append((key, [_parse_value(v) for v in vals.split(",")]))
    points = []
    for combo in itertools.product(*[vals for _, vals in axes]):
        data = base.to_dict()
        data.update({k: v for (k, _), v in zip(axes, combo)})
        try:
            from_dict(data)
        except ConfigError as exc:
            return _report_config_error(exc)
        points.append((combo, data))
    if args.parallel and args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_sweep_one, [d for _, d in points]))
    else:
        results = [_sweep_one(d) for _, d in points]
    keys = [k for k, _ in axes]
    cols = ["max_height", "fn_height", "violations", "max_fork_depth", "suspicious_blocks", "skips"]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(keys + cols)
    for (combo, _), res in zip(points, results):
        writer.writerow(list(combo) + [res["summary"][c] for c in cols])
    mpath = _out_path(args.metrics)
    if mpath is not None:
        _write(mpath, json.dumps([{"point": dict(zip(keys, combo)), **res}
                                  for (combo, _), res in zip(points, results)], indent=2, sort_keys=True) + "\n")
    return 2 if any(r["violations"] for r in results) else 0


def cmd_analyze(args) -> int:
    if args.what == "table1":
        rows = table1(args.f_prime)
        print(format_table1(rows))
        print("s1 is gated against the printed values (factor 2); s2 is reported only, f' is a free parameter.")
        return 0
    if args.what == "sweep":
        rows = sweep_rows(args.n, args.f, args.c, args.d, args.k)
        writer = csv.DictWriter(sys.stdout, fieldnames=["n", "f", "c", "d", "k", "s1", "s2"], lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({**r, "s1": f"{r['s1']:.6e}", "s2": f"{r['s2']:.6e}"})
        return 0
    if args.what == "metrics":
        if not args.trace:
            print("analyze metrics needs --trace", file=sys.stderr)
            return 1
        try:
            m = trace_metrics(Trace.read(args.trace))
        except (OSError, ValueError) as exc:
            print(f"cannot read trace: {exc}", file=sys.stderr)
            return 1
        print(json.dumps(m.as_dict(), indent=2, sort_keys=True))
        return 0
    return 1


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",")]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cebft", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--trace")
    run.add_argument("--metrics")
    run.add_argument("--ablate", action="append", choices=["honest-filter"])
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("replay", help="re-execute a trace's scenario and diff")
    rep.add_argument("trace")
    rep.set_defaults(func=cmd_replay)

    sw = sub.add_parser("sweep", help="run a config over a grid of overrides")
    sw.add_argument("config")
    sw.add_argument("--vary", action="append", metavar="KEY=A,B,C")
    sw.add_argument("--seed", type=int)
    sw.add_argument("--parallel", type=int, default=1)
    sw.add_argument("--metrics")
    sw.add_argument("--ablate", action="append", choices=["honest-filter"])
    sw.set_defaults(func=cmd_sweep)

    an = sub.add_parser("analyze", help="closed-form security analysis")
    an.add_argument("what", choices=["table1", "sweep", "metrics"])
    an.add_argument("--f-prime", type=int)
    an.add_argument("--n", type=int, default=101)
    an.add_argument("--f", type=_ints, default=[20, 25, 33])
    an.add_argument("--c", type=_ints, default=[6, 8, 10])
    an.add_argument("--d", type=_ints, default=[4, 5, 7])
    an.add_argument("--k", type=_ints, default=[1, 3, 5, 7])
    an.add_argument("--trace")
    an.set_defaults(func=cmd_analyze)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
