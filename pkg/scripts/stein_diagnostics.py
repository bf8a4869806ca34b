"""Hessian probes of the Stein solution and their growth in |log t|.

    python scripts/stein_diagnostics.py
"""

import numpy as np

from wienerdc import stein
from wienerdc.distances import Ball, HalfSpace
from wienerdc.gausssim import CovarianceMatrix

TS = (0.1, 0.01, 0.001, 1e-4)


def main():
    sigma = CovarianceMatrix.identity(2)
    pts = np.array([[0.0, 0.0], [0.2, -0.1], [1.0, 0.5], [-0.7, 0.3]])
    half = HalfSpace((0.6, 0.8), 0.0)
    print("half-space through the origin, closed form")
    print(f"{'t':>8}{'probe max':>14}{'probe mean':>14}{'lemma rhs (d_c=0.05)':>24}")
    for t in TS:
        r = stein.hessian_probe(half, sigma, t, pts, dc=0.05)
        print(f"{t:>8g}{r.max:>14.4g}{r.mean:>14.4g}{r.rhs:>24.4g}")
    a, peaks = stein.log_t_growth(half, sigma, pts, TS)
    print(f"sqrt(probe max) ~ |log t|^{a:.2f}\n")

    ball = Ball((0.0, 0.0), 1.0)
    print("unit ball, Monte Carlo (budget 20000)")
    for t in TS[:3]:
        r = stein.hessian_probe(ball, sigma, t, pts[:2], dc=0.05, budget=20_000)
        print(f"t={t:g}: usable {r.usable}/{r.points}, mean {r.mean:.4g}, steps {np.round(r.step, 4).tolist()}")


if __name__ == "__main__":
    main()
