"""Dense sublevel-set convexity scan of the off-centre k=1 ring on the disk.

Prints defect/M for every hole radius under two depth choices: the automatic
one (M1 measured from the hole centre) and a depth measured from the origin.
The second is smaller and is the regime where small genuine defects show up.

    python3 scripts/level_scan.py [--h 0.0078125] [--levels 120]
"""
import argparse

import numpy as np

from khessian import analysis, barriers
from khessian.geometry import ConvexDomain, Grid, RingDomain
from khessian.grid_solver import solve_hole_free, solve_ring


def scan(h, levels, x0=(0.5, 0.0), eps_list=(0.12, 0.08, 0.05)):
    disk = ConvexDomain.ball((0.0, 0.0), 1.0)
    psi = solve_hole_free(disk, Grid.covering(disk, h), 1)
    psi_min = float(np.nanmin(psi.values))
    depths = {
        "hole-centred M1": barriers.choose_M1(psi_min, disk, 2, 1, center=x0),
        "origin M1": barriers.choose_M1(psi_min, disk, 2, 1),
    }
    for name, M in depths.items():
        for eps in eps_list:
            u, rep = solve_ring(RingDomain(disk, x0, eps), Grid.covering(disk, h), M, 1, psi=psi)
            qr = analysis.quasiconvexity_report(analysis.extend_utilde(u), levels, threshold=20)
            print(f"{name:16s} M={M:.6f} eps={eps:<5} newton={rep.iterations:2d} max defect/M={qr.max_defect / M:.5f} threshold={20 * h:.5f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, default=1 / 128)
    ap.add_argument("--levels", type=int, default=120)
    a = ap.parse_args()
    scan(a.h, a.levels)
