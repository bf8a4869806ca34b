"""Command line entry point.

Exit codes: 0 success, 1 a hard failure was recorded (see failures.json),
2 configuration error, 3 a module contract was violated.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

from .. import bounds, distances
from ..errors import ConfigError, WienerDCError
from ..functionals import simulate_breuer_major
from ..gausssim import SampleBatch
from . import config as config_mod
from .experiments import run
from .io import Progress, write_outputs

# subcommand -> experiment kind it runs (None keeps the config's kind)
COMMAND_KIND = {
    "rates": "breuer-major-rate",
    "verify": None,
    "stein-diag": "stein-diagnostic",
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--workers", type=int, help="parallel sweep points (env WIENERDC_WORKERS)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    p.add_argument("--resume", action="store_true", help="skip sweep points already in DIR")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wienerdc", description="Convex-distance bounds and Monte Carlo checks for Wiener functionals")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="draw Breuer-Major batches and save them as CSV")
    _common(p)
    p = sub.add_parser("bounds", help="evaluate the bound calculators along the n-grid")
    _common(p)
    p.add_argument("--gamma-R", type=int, help="replicates for the Monte Carlo gamma^2")
    p = sub.add_parser("rates", help="run the Breuer-Major rate experiment")
    _common(p)
    p = sub.add_parser("distances", help="estimate distances for a saved sample batch")
    _common(p)
    p.add_argument("--samples", required=True, help="CSV written by 'simulate'")
    p.add_argument("--sigma", required=True, help='target covariance, rows separated by ";" e.g. "1,0;0,1"')
    p.add_argument("--reference", help="second CSV batch for the transport distance")
    p = sub.add_parser("verify", help="exact-inequality suite or fourth-moment identity")
    _common(p)
    p = sub.add_parser("stein-diag", help="smoothing-lemma and Hessian diagnostics")
    _common(p)
    return ap


def _load(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    if args.workers is not None:
        changes["workers"] = args.workers
    kind = COMMAND_KIND.get(args.command)
    if args.command == "verify" and cfg.kind not in ("inequality-suite", "fourth-moment"):
        kind = "inequality-suite"
    if kind:
        changes["kind"] = kind
    if getattr(args, "gamma_R", None):
        changes["gamma_R"] = args.gamma_R
    return dataclasses.replace(cfg, **changes).validate() if changes else cfg


def _run_experiment(cfg, args) -> int:
    prog = Progress(cfg.out, cfg)
    done = prog.load() if args.resume else {}
    if done:
        print(f"resuming: {len(done)} completed point(s) reused")
    res = run(cfg, workers=args.workers, done=done, on_point=prog.add)
    paths = write_outputs(res, cfg, cfg.out)
    print(open(paths["summary.txt"]).read(), end="")
    return 1 if res.failures else 0


def _simulate(cfg) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    for n in cfg.n_grid:
        batch = simulate_breuer_major(cfg.spec(n), cfg.R, cfg.seed, key=(0, n)).batch
        path = os.path.join(cfg.out, f"samples_n{n}.csv")
        batch.to_csv(path)
        print(path)
    return 0


def _bounds(cfg) -> int:
    from ..functionals import estimate_gamma_sq
    from ..hermite import is_two_sparse

    records = []
    for n in sorted(cfg.n_grid):
        spec = cfg.spec(n)
        sigma = spec.limit_covariance()
        g = estimate_gamma_sq(spec, sigma, cfg.gamma_R or cfg.R, cfg.seed, key=(0, n))
        reports = [
            bounds.theorem1_bound(sigma, g.value),
            bounds.corollary2_rates(spec.model, n, float(cfg.b_grid[0]), is_two_sparse(spec.phi)),
            bounds.item_iii_split(spec.model, n),
            bounds.recursion_check(sigma, g.value**0.5),
        ]
        for rep in reports:
            rec = rep.to_record()
            rec["n"] = n
            records.append(rec)
            print(f"n={n:<7} {rep.bound_id:<16} {rep.value:.6g} (clipped {rep.clipped:.4g}, {rep.constant})")
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "bounds.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=("schema_version",) + bounds.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in records:
            row = bounds.BoundReport(r["bound_id"], r["value"], r["inputs"], constant=r["constant"]).csv_row()
            row["n"] = r["n"]
            w.writerow({"schema_version": 1, **row})
    with open(os.path.join(cfg.out, "bounds.json"), "w") as fh:
        json.dump(records, fh, indent=1, sort_keys=True, default=str)
    return 0


def _distances(cfg, args) -> int:
    batch = SampleBatch.from_csv(args.samples)
    sigma = config_mod.parse_sigma(args.sigma)
    out = {"dc_lower": distances.dc_lower(batch, sigma, cfg.convex_classes(), n_boot=cfg.n_boot, seed=cfg.seed)}
    out["d2"] = distances.d2_estimate(batch, sigma)
    if args.reference:
        ref = SampleBatch.from_csv(args.reference)
        k = min(batch.R, ref.R, cfg.dW_R)
        out["dW"] = distances.dW_estimate(batch.data[:k], ref.data[:k], n_boot=cfg.dW_boot, seed=cfg.seed)
    recs = {k: v.to_record() for k, v in out.items()}
    for k, v in out.items():
        print(f"{k:<9} {v.value:.6f}  se {v.se:.6f}  [{v.family}]")
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "distances.json"), "w") as fh:
        json.dump(recs, fh, indent=1, sort_keys=True)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "simulate":
            return _simulate(cfg)
        if args.command == "bounds":
            return _bounds(cfg)
        if args.command == "distances":
            return _distances(cfg, args)
        return _run_experiment(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except WienerDCError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
