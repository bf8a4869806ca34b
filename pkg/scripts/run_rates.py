"""Breuer-Major rate sweeps: i.i.d. H_2 (slope fit) and the fGN sandwich instances.

    python scripts/run_rates.py [--quick] [--out results]
"""

import argparse
import dataclasses
import os
import time

from wienerdc.harness import config
from wienerdc.harness.experiments import run
from wienerdc.harness.io import summary_text, write_outputs

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIGS = os.path.join(HERE, os.pardir, "configs")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="R = 1e4 and fewer bootstrap draws")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    for name in ("bm_h2_iid", "fgn_sandwich"):
        cfg = config.load(os.path.join(CONFIGS, f"{name}.yaml"))
        cfg = dataclasses.replace(cfg, out=os.path.join(args.out, name))
        if args.quick:
            cfg = dataclasses.replace(cfg, R=10_000, gamma_R=2000, n_boot=50)
        t0 = time.perf_counter()
        res = run(cfg)
        write_outputs(res, cfg, cfg.out)
        print(summary_text(res, cfg), end="")
        print(f"({time.perf_counter() - t0:.0f} s, written to {cfg.out})\n")


if __name__ == "__main__":
    main()
