"""Exact quadruple-sum chain on random autocovariance tables and classical models.

    python scripts/inequality_suite.py [--tables 50] [--seed 0]
"""

import argparse

import numpy as np

from wienerdc import bounds
from wienerdc.gausssim import AutocovarianceModel
from wienerdc.harness.experiments import random_table

B_GRID = (1.0, 1.25, 1.5, 2.0)


def check(model, n):
    q1, q2 = bounds.q1_bruteforce(model, n), bounds.q2_bruteforce(model, n)
    young = bounds.young_majorant_q1(model, n)
    worst = max(bounds.q2_bruteforce(model, n) / bounds.holder_majorant_q2(model, n, b) for b in B_GRID)
    return q1, young, q2, worst


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tables", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"{'model':<22}{'n':>4}{'Q1':>12}{'Young':>12}{'Q2':>12}{'max Q2/Holder':>15}")
    named = [("iid", AutocovarianceModel.iid()), ("ar 0.8", AutocovarianceModel.ar(0.8)),
             ("fgn 0.7", AutocovarianceModel.fgn(0.7)), ("fgn 0.9", AutocovarianceModel.fgn(0.9))]
    for label, model in named:
        for n in (16, 64):
            q1, young, q2, ratio = check(model, n)
            print(f"{label:<22}{n:>4}{q1:>12.5g}{young:>12.5g}{q2:>12.5g}{ratio:>15.4f}")
    rng = np.random.default_rng(args.seed)
    ratios = []
    for i in range(args.tables):
        model = random_table(args.seed, i)
        n = int(rng.integers(2, 65))
        q1, young, _, ratio = check(model, n)
        ratios.append(max(q1 / young, ratio))
    print(f"\n{args.tables} random tables: largest sum/majorant ratio {max(ratios):.4f} (must be <= 1)")


if __name__ == "__main__":
    main()
