"""Tracking error of triangle-wave chattering around z = 0 as the period shrinks.

    python scripts/chatter_refinement.py [--horizon 10] [--levels 5]
"""

import argparse

import numpy as np

from relaxinc.inclusion import relax
from relaxinc.integrate import Chatter, TimeGrid, integrate, integrate_relaxed, zero_target
from relaxinc.relaxapprox import Partition, approximate_segment
from relaxinc.systems import builtin


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=float, default=10.0)
    ap.add_argument("--levels", type=int, default=5)
    ap.add_argument("--period", type=float, default=0.2)
    args = ap.parse_args()

    F = builtin("binary_switch")
    print(f"{'period':>10} {'forward sup':>12} {'ratio':>7} {'segment sup':>12} {'ratio':>7}")
    prev_f = prev_s = None
    for j in range(args.levels):
        p = args.period / 2**j
        x = integrate(F, Chatter(), [0.0], TimeGrid.uniform(0.0, args.horizon, p))
        fwd = float(np.max(np.abs(x.states)))
        # the same question answered by the backward segment map on [0, 1]
        z = integrate_relaxed(relax(F), zero_target, [0.0], TimeGrid.uniform(0.0, 1.0, p))
        seg = approximate_segment(F, z, 1, 1.0, np.zeros(1), Partition.uniform(1.0, 1.0)).sup_error
        rf = "" if prev_f is None else f"{prev_f / fwd:7.3f}"
        rs = "" if prev_s is None else f"{prev_s / seg:7.3f}"
        print(f"{p:10.5f} {fwd:12.6g} {rf:>7} {seg:12.6g} {rs:>7}")
        prev_f, prev_s = fwd, seg


if __name__ == "__main__":
    main()
