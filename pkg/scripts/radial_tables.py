"""Radial tables: oracle convergence for the k=1 annulus, boundary scalings, measure limit.

    python3 scripts/radial_tables.py
"""
from math import comb

import numpy as np

from khessian.experiments import ExperimentConfig, run_measure_study
from khessian.geometry import ConvexDomain, Grid, RingDomain
from khessian.grid_solver import solve_ring
from khessian.radial import boundary_scalings, solve_radial_ring


def annulus_convergence(eps=0.1, M=1.0):
    disk = ConvexDomain.ball((0.0, 0.0), 1.0)
    exact = solve_radial_ring(eps, 1.0, M, 2, 1)
    prev = None
    for h in (1 / 32, 1 / 64, 1 / 128):
        u, rep = solve_ring(RingDomain(disk, (0.0, 0.0), eps), Grid.covering(disk, h), M, 1)
        act = u.grid.active
        r = np.linalg.norm(u.grid.coords[act], axis=-1)
        err = float(np.max(np.abs(u.values[act] - exact.u(r))))
        ratio = "" if prev is None else f" ratio={prev / err:.3f}"
        print(f"annulus h=1/{round(1 / h)} max error={err:.3e}{ratio}")
        prev = err


def scalings(M_values=(None, 1.0)):
    for n, k in ((4, 1), (2, 1), (5, 2), (4, 2), (3, 2)):
        for M in M_values:
            depth = M if M is not None else 1.0 / (2 * comb(n, k) ** (1 / k))
            vals = []
            for eps in (0.1, 0.05, 0.025):
                vals.append(boundary_scalings(solve_radial_ring(eps, 1.0, depth, n, k))["scaled_gradient"])
            var = (max(vals) - min(vals)) / max(abs(v) for v in vals)
            print(f"n={n} k={k} M={depth:.5f} scaled gradient " + " ".join(f"{v:.5f}" for v in vals) + f" variation={var:.2%}")


def measure_limit():
    res = run_measure_study(ExperimentConfig.from_dict({"mode": "measure", "measure": {"eps": [0.1, 0.05, 0.025, 0.0125]}}))
    for b in res["balls"]:
        vals = " ".join(f"{m:.5f}" for m in b["measures"])
        print(f"n={res['n']} k={res['k']} M={res['M']:.5f} measures {vals} extrapolated={b['extrapolated']:.5f} volume={b['volume']:.5f}")


if __name__ == "__main__":
    annulus_convergence()
    scalings()
    measure_limit()
