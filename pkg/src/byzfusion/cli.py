"""Command-line front end.

Exit codes: 0 success, 2 config error, 3 bound violation (verify-bounds).
Every file is written atomically (temp file + rename).  Nothing here reads
the clock or ambient randomness; all seeds come from the config or flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from . import __version__, analysis, sim
from .channel import ChannelError, Dmc, capacity
from .config import ConfigError, load_config, strategy_mdp_params

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VIOLATION = 3


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _load(args):
    return load_config(args.config, schedule_eps=getattr(args, "paper_schedule", None))


def _out_dir(args, cfg) -> Path | None:
    out = getattr(args, "out", None) or cfg.outputs.get("dir")
    return Path(out) if out else None


def cmd_validate(args) -> int:
    cfg = _load(args)
    if args.print_normalized:
        sys.stdout.write(cfg.normalized_json())
    else:
        p = cfg.params
        print(f"ok: v={p.chunk_count} j={p.bin_count} k={p.verifier_count} n={p.block_length} "
              f"l={p.verify_block_length} eps={p.code_error:.9g} beta={p.byzantine_fraction:.9g} "
              f"strategy={cfg.strategy_name}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    s = sim.run_experiment(cfg, args.trials, args.seed, workers=args.workers, backend=args.backend,
                           engine=args.engine)
    text = s.to_json()
    out = _out_dir(args, cfg)
    if out is not None:
        write_atomic(out / "stats.json", text)
        write_atomic(out / "config.normalized.json", cfg.normalized_json())
        if args.transcripts:
            lines = []
            tcfg = cfg if args.seed is None else sim._with(cfg, None, args.seed)
            for t, tr in sim.session_transcripts(tcfg, range(args.transcripts)):
                lines.extend(tr.jsonl_lines(t))
            write_atomic(out / "transcripts.jsonl", "\n".join(lines) + "\n")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load(args)
    p = cfg.params
    doc = {"params": p.to_dict(), "schedule_violations": _violations(p)}
    try:
        doc["bounds"] = analysis.bound_report(p, args.tail).to_dict()
    except analysis.RegimeError as exc:
        doc["bounds"] = None
        doc["regime"] = str(exc)
    if cfg.strategy_name == "mdp_optimal":
        sol = analysis.solve_mdp(strategy_mdp_params(cfg))
        doc["mdp"] = sol.to_dict()
    cap = capacity(cfg.dmc)
    doc["capacity_bits"] = cap.capacity_bits
    text = sim.canonical_json(doc)
    out = _out_dir(args, cfg)
    if out is not None:
        write_atomic(out / "analysis.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def _violations(p):
    from .protocol import schedule_violations

    return schedule_violations(p)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    try:
        grid = json.loads(Path(args.grid).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read grid: {exc.strerror}", None, args.grid) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, args.grid) from None
    rows, _ = sim.sweep(cfg, grid, args.trials, args.seed, workers=args.workers, backend=args.backend)
    csv_text = sim.rows_csv(rows)
    out = _out_dir(args, cfg)
    if out is not None:
        write_atomic(out / "sweep.csv", csv_text)
        write_atomic(out / "sweep.json", sim.canonical_json(rows))
    sys.stdout.write(csv_text)
    return EXIT_OK


def cmd_capacity(args) -> int:
    if args.dmc:
        try:
            dmc = Dmc.load(args.dmc)
        except OSError as exc:
            raise ConfigError(f"cannot read DMC: {exc.strerror}", None, args.dmc) from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, args.dmc) from None
        except (ChannelError, KeyError) as exc:
            raise ConfigError(f"invalid DMC: {exc}", None, args.dmc) from None
    elif args.config:
        dmc = load_config(args.config).dmc
    else:
        raise ConfigError("capacity needs --dmc or --config")
    res = capacity(dmc, tolerance=args.tolerance)
    doc = {
        "capacity_bits": res.capacity_bits,
        "optimal_input": res.optimal_input.tolist(),
        "iterations": res.iterations,
        "bracket": res.bracket,
    }
    print(f"capacity_bits {res.capacity_bits:.9g}")
    if args.json:
        sys.stdout.write(sim.canonical_json(doc))
    return EXIT_OK


def cmd_verify_bounds(args) -> int:
    cfg = _load(args)
    s = sim.run_experiment(cfg, args.trials, args.seed, workers=args.workers, backend=args.backend,
                           engine=args.engine)
    checks = sim.verify_bounds(cfg, s)
    for c in checks:
        print(c.line())
    out = _out_dir(args, cfg)
    if out is not None:
        doc = {"stats": s.to_dict(), "checks": [c.__dict__ for c in checks]}
        write_atomic(out / "verify.json", sim.canonical_json(doc))
    bad = [c for c in checks if not c.ok]
    print(f"{len(checks) - len(bad)}/{len(checks)} checks passed")
    return EXIT_VIOLATION if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="byzfusion", description="Byzantine sensor fusion simulator and bounds")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, run=False, schedule=True):
        p.add_argument("--config", required=True, help="experiment JSON")
        if schedule:
            p.add_argument("--paper-schedule", type=float, metavar="EPS", dest="paper_schedule",
                           help="derive v, j, k, n from EPS (beta from the config)")
        if run:
            p.add_argument("--trials", type=int, help="override the config's trial count")
            p.add_argument("--seed", type=int, help="override the master seed")
            p.add_argument("--workers", type=int, default=1, help="parallel workers (results do not depend on it)")
            p.add_argument("--backend", choices=("numba", "numpy"), help="kernel backend")
            p.add_argument("--engine", choices=sim.ENGINES, default="auto")

    p = sub.add_parser("validate", help="check a config")
    common(p)
    p.add_argument("--print-normalized", action="store_true", dest="print_normalized")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    common(p, run=True)
    p.add_argument("--out", help="output directory")
    p.add_argument("--transcripts", type=int, default=0, metavar="T",
                   help="also write JSONL transcripts of the first T trials")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="print analytic bounds and the MDP solution")
    common(p)
    p.add_argument("--tail", choices=("chain", "exact"), default="chain")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="run a parameter grid")
    common(p, run=True, schedule=False)
    p.add_argument("--grid", required=True, help="grid JSON: {\"axes\": {...}} or {\"points\": [...]}")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("capacity", help="channel capacity of a DMC")
    p.add_argument("--dmc", help="DMC JSON {inputs, outputs, rows}")
    p.add_argument("--config", help="take the DMC from an experiment config")
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--json", action="store_true", help="also print the full result as JSON")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("verify-bounds", help="simulate and compare with the analytic bounds")
    common(p, run=True)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_verify_bounds)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
