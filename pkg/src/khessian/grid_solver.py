"""Finite-difference solver for sigma_k(D^2 u) = 1 on 2-D and 3-D ring domains.

The discrete Hessian is linear in the nodal values, ``H_ij = A_ij u + b_ij``,
with Shortley-Weller unequal arms wherever an axis arm is cut by a boundary.
Newton's method runs on the concave residual ``sigma_k(H)^(1/k) - 1``; ring
solves with k >= 2 reach it through a continuation in the right-hand side.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import barriers
from .geometry import (
    EXTERIOR,
    HOLE,
    ConvexDomain,
    Grid,
    RingDomain,
    boundary_intersection,
    classify_nodes,
)
from .symfun import (
    DEFAULT_CONE_TOL,
    admissible_batch,
    char_coeffs_batch,
    eigvals_batch,
    sigma_k_gradient_batch,
)

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class Diverged(SolverError):
    pass


class NotAdmissible(SolverError):
    pass


@dataclass
class SolveOptions:
    tol: float = 1e-8
    max_iter: int = 500
    damping_floor: float = 2.0**-20
    cone_tol: float = DEFAULT_CONE_TOL
    pseudo_steps: int = 50
    pseudo_tau_factor: float = 0.2
    linear_rtol: float = 1e-10
    repair_passes: int = 200


@dataclass
class SolveReport:
    iterations: int = 0
    residual_inf: float = float("inf")
    damping_history: list = field(default_factory=list)
    repairs: int = 0
    pseudo_time_steps: int = 0
    degenerate_mixed: int = 0
    converged: bool = False
    initialization: str = "given"
    homotopy_stages: int = 0
    roundoff_floor: float = 0.0
    wall_time: float = 0.0

    def to_dict(self, include_time: bool = False) -> dict:
        out = {
            "iterations": self.iterations,
            "residual_inf": self.residual_inf,
            "damping_history": list(self.damping_history),
            "repairs": self.repairs,
            "pseudo_time_steps": self.pseudo_time_steps,
            "degenerate_mixed": self.degenerate_mixed,
            "converged": self.converged,
            "initialization": self.initialization,
            "homotopy_stages": self.homotopy_stages,
            "roundoff_floor": self.roundoff_floor,
        }
        if include_time:
            out["wall_time"] = self.wall_time
        return out


class StencilOperator:
    """Sparse first- and second-derivative operators on the active nodes.

    ``hessians(u)`` returns an ``(N, d, d)`` stack; ``u`` holds the active
    unknowns in lexicographic node order.
    """

    def __init__(self, grid: Grid, domain, inner_value: float | None = None, outer_value: float = 0.0):
        if grid.node_class is None:
            grid = classify_nodes(grid, domain)
        self.grid = grid
        self.domain = domain
        self.inner_value = inner_value
        self.outer_value = outer_value
        d = grid.dim
        active = grid.active
        self.flat_active = np.flatnonzero(active.ravel())
        self.n_active = self.flat_active.size
        self.index = np.full(active.size, -1, dtype=np.int64)
        self.index[self.flat_active] = np.arange(self.n_active)
        self.strides = [int(np.prod(grid.shape[i + 1 :])) for i in range(d)]
        self.cut = {}
        self.second = {}
        self.first = {}
        self.degenerate_mixed = 0
        for i in range(d):
            self._assemble_axis(i)
        for i in range(d):
            for j in range(i + 1, d):
                self._assemble_mixed(i, j)

    # -- assembly ---------------------------------------------------------
    def _boundary_value(self, which: str) -> float:
        return self.outer_value if which == "outer" else self.inner_value

    def _arm(self, axis: int, sign: int):
        """theta and boundary value for every active node along one arm."""
        n = self.n_active
        nb = self.flat_active + sign * self.strides[axis]
        nb_idx = self.index[nb]
        theta = np.ones(n)
        gval = np.zeros(n)
        cut = np.flatnonzero(nb_idx < 0)
        coords = self.grid.coords.reshape(-1, self.grid.dim)
        direction = np.zeros(self.grid.dim)
        direction[axis] = sign
        for m in cut:
            th, _, which = boundary_intersection(coords[self.flat_active[m]], direction, self.domain, self.grid.h)
            theta[m] = th
            gval[m] = self._boundary_value(which)
        self.cut[(axis, sign)] = cut
        return nb_idx, theta, gval

    def _assemble_axis(self, i: int):
        h = self.grid.h
        n = self.n_active
        rows = np.arange(n)
        nbp, tp, gp = self._arm(i, +1)
        nbm, tm, gm = self._arm(i, -1)
        cp = 2.0 / (h * h * tp * (tp + tm))
        cm = 2.0 / (h * h * tm * (tp + tm))
        c0 = -2.0 / (h * h * tp * tm)
        A, b = self._build(rows, [(nbp, cp, gp), (nbm, cm, gm)], c0)
        self.second[(i, i)] = (A, b)
        # first derivative, second order on unequal arms
        den = h * tp * tm * (tp + tm)
        fp = tm * tm / den
        fm = -tp * tp / den
        f0 = (tp * tp - tm * tm) / den
        self.first[i] = self._build(rows, [(nbp, fp, gp), (nbm, fm, gm)], f0)

    def _build(self, rows, arms, c0):
        n = self.n_active
        r_list, c_list, v_list = [rows], [rows], [np.broadcast_to(c0, rows.shape).astype(float)]
        b = np.zeros(n)
        for nb_idx, coef, gval in arms:
            inside = nb_idx >= 0
            r_list.append(rows[inside])
            c_list.append(nb_idx[inside])
            v_list.append(coef[inside])
            b[~inside] += coef[~inside] * gval[~inside]
        A = sp.csr_matrix(
            (np.concatenate(v_list), (np.concatenate(r_list), np.concatenate(c_list))), shape=(n, n)
        )
        return A, b

    def _assemble_mixed(self, i: int, j: int):
        h = self.grid.h
        n = self.n_active
        si, sj = self.strides[i], self.strides[j]
        base = self.flat_active

        def idx(a, b_):
            return self.index[base + a * si + b_ * sj]

        corners = {(a, b_): idx(a, b_) for a in (-1, 0, 1) for b_ in (-1, 0, 1)}
        central = np.all([corners[(a, b_)] >= 0 for a in (-1, 1) for b_ in (-1, 1)], axis=0)
        rows_l, cols_l, vals_l = [], [], []
        rows = np.flatnonzero(central)
        for (a, b_), w in (((1, 1), 1), ((1, -1), -1), ((-1, 1), -1), ((-1, -1), 1)):
            rows_l.append(rows)
            cols_l.append(corners[(a, b_)][rows])
            vals_l.append(np.full(rows.size, w / (4 * h * h)))
        remaining = ~central
        for a, b_ in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            ok = remaining & (corners[(a, 0)] >= 0) & (corners[(0, b_)] >= 0) & (corners[(a, b_)] >= 0)
            rows = np.flatnonzero(ok)
            s = a * b_ / (h * h)
            for key, w in (((a, b_), s), ((a, 0), -s), ((0, b_), -s), ((0, 0), s)):
                rows_l.append(rows)
                cols_l.append(corners[key][rows])
                vals_l.append(np.full(rows.size, w))
            remaining &= ~ok
        self.degenerate_mixed += int(np.sum(remaining))
        A = sp.csr_matrix(
            (np.concatenate(vals_l), (np.concatenate(rows_l), np.concatenate(cols_l))), shape=(n, n)
        )
        self.second[(i, j)] = (A, np.zeros(n))

    # -- evaluation -------------------------------------------------------
    def hessians(self, u: np.ndarray) -> np.ndarray:
        d = self.grid.dim
        H = np.empty((self.n_active, d, d))
        for (i, j), (A, b) in self.second.items():
            H[:, i, j] = A @ u + b
            H[:, j, i] = H[:, i, j]
        return H

    def gradients(self, u: np.ndarray) -> np.ndarray:
        return np.stack([A @ u + b for A, b in (self.first[i] for i in range(self.grid.dim))], axis=-1)

    @cached_property
    def laplacian(self):
        L = sum(self.second[(i, i)][0] for i in range(self.grid.dim)).tocsr()
        b = sum(self.second[(i, i)][1] for i in range(self.grid.dim))
        return L, b

    def row_of(self, node) -> int:
        flat = int(np.ravel_multi_index(tuple(node), self.grid.shape))
        r = int(self.index[flat])
        if r < 0:
            raise KeyError(f"node {node} is not an active node")
        return r

    def scatter(self, u_active: np.ndarray, fill=np.nan) -> np.ndarray:
        out = np.full(self.grid.node_class.size, fill, dtype=float)
        out[self.flat_active] = u_active
        return out.reshape(self.grid.shape)

    def gather(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float).ravel()[self.flat_active]


@dataclass(frozen=True, eq=False)
class GridField:
    """Nodal values on a classified grid; hole nodes hold -M, exterior nodes NaN."""

    grid: Grid
    values: np.ndarray
    k: int
    domain: object
    M: float | None = None
    n_equation: int | None = None
    report: SolveReport | None = None

    def __post_init__(self):
        if self.n_equation is None:
            object.__setattr__(self, "n_equation", self.grid.dim)

    @property
    def eps(self):
        return self.domain.hole_radius if isinstance(self.domain, RingDomain) else None

    @property
    def outer(self) -> ConvexDomain:
        return self.domain.outer if isinstance(self.domain, RingDomain) else self.domain

    @cached_property
    def operator(self) -> StencilOperator:
        inner = -self.M if self.M is not None else None
        return StencilOperator(self.grid, self.domain, inner_value=inner)

    def replace_values(self, values) -> "GridField":
        return replace(self, values=np.asarray(values, dtype=float), report=None)

    def active_values(self) -> np.ndarray:
        return self.operator.gather(self.values)

    def hessians(self) -> np.ndarray:
        return self.operator.hessians(self.active_values())

    def gradients(self) -> np.ndarray:
        return self.operator.gradients(self.active_values())

    def sigma(self) -> np.ndarray:
        return char_coeffs_batch(self.hessians())[:, self.k - 1]


def discrete_hessian(field: GridField, node) -> np.ndarray:
    """Symmetrised discrete Hessian at one active node."""
    op = field.operator
    r = op.row_of(node)
    u = field.active_values()
    d = field.grid.dim
    H = np.empty((d, d))
    for (i, j), (A, b) in op.second.items():
        H[i, j] = H[j, i] = (A.getrow(r) @ u)[0] + b[r]
    return H


def _signed_root(s, k):
    return np.sign(s) * np.abs(s) ** (1.0 / k)


def residual(field: GridField, k: int | None = None, cone_tol: float = DEFAULT_CONE_TOL):
    """sigma_k(lambda(D_h^2 u))^(1/k) - 1 at active nodes, scattered onto the grid.

    Returns ``(residual_grid, admissible_grid)``; inadmissible nodes are
    flagged, not raised.
    """
    k = field.k if k is None else k
    H = field.hessians()
    coeffs = char_coeffs_batch(H)
    res = _signed_root(coeffs[:, k - 1], k) - 1.0
    adm = admissible_batch(H, k, cone_tol, coeffs)
    op = field.operator
    adm_grid = np.zeros(field.grid.node_class.size, bool)
    adm_grid[op.flat_active] = adm
    return op.scatter(res), adm_grid.reshape(field.grid.shape)


def _evaluate(op: StencilOperator, u: np.ndarray, k: int, tau: float):
    H = op.hessians(u)
    coeffs = char_coeffs_batch(H)
    s = coeffs[:, k - 1]
    F = _signed_root(s, k) - 1.0
    adm = admissible_batch(H, k, tau, coeffs) & (s > 0)
    return H, coeffs, F, adm


def _jacobian(op: StencilOperator, H, coeffs, k: int):
    G = sigma_k_gradient_batch(H, k, coeffs)
    s = coeffs[:, k - 1]
    w = np.where(s > 0, np.abs(s) ** (1.0 / k - 1.0) / k, 0.0)
    J = None
    for (i, j), (A, _) in op.second.items():
        scale = w * G[:, i, j] * (1.0 if i == j else 2.0)
        term = sp.diags(scale) @ A
        J = term if J is None else J + term
    return J.tocsc()


def _linear_solve(J, rhs, d: int, rtol: float):
    if d <= 2:
        # diagonal pivoting on a fill-reducing ordering of A + A^T is about a
        # third cheaper than the default here; a poor pivot shows up in the residual
        J = J.tocsc()
        x = spla.splu(J, permc_spec="MMD_AT_PLUS_A", options=dict(SymmetricMode=True)).solve(rhs)
        scale = abs(J) @ np.abs(x) + np.abs(rhs)
        if not np.all(np.abs(J @ x - rhs) <= 1e-8 * scale):
            x = spla.spsolve(J, rhs)
        return x
    ilu = spla.spilu(J.tocsc(), drop_tol=1e-5, fill_factor=20)
    pre = spla.LinearOperator(J.shape, ilu.solve)
    x, info = spla.gmres(J, rhs, M=pre, rtol=rtol, atol=0.0, restart=100, maxiter=2000)
    if info != 0:
        x = spla.spsolve(J.tocsc(), rhs)
    return x


def _self_coupling(op: StencilOperator, rows: np.ndarray) -> np.ndarray:
    """Change of each row's discrete Hessian per unit decrease of its own value."""
    d = op.grid.dim
    D = np.zeros((rows.size, d, d))
    for (i, j), (A, _) in op.second.items():
        D[:, i, j] = -np.asarray(A[rows, rows]).ravel()
        D[:, j, i] = D[:, i, j]
    return D


# repaired nodes land where sigma_k^(1/k) >= this, well inside the cone, so the
# Newton Jacobian is not nearly singular there
REPAIR_TARGET = 0.25


def _repair_pass(op, u, k, tau):
    """One Jacobi sweep of minimal downward shifts; returns (u, number of nodes shifted)."""
    H, _, F, adm = _evaluate(op, u, k, tau)
    bad = np.flatnonzero(~adm | (F < REPAIR_TARGET - 1.0))
    if bad.size == 0:
        return u, 0
    Hb = H[bad]
    D = _self_coupling(op, bad)
    lam = eigvals_batch(Hb)
    dmin = np.min(np.diagonal(D, axis1=1, axis2=2), axis=1)
    margin = 1e-3 * (1.0 + np.max(np.abs(lam), axis=1))
    delta = (np.maximum(0.0, -lam.min(axis=1)) + margin) / dmin
    todo = np.ones(bad.size, bool)
    for _ in range(60):
        trial = Hb[todo] + delta[todo, None, None] * D[todo]
        ok = admissible_batch(trial, k, tau) & (char_coeffs_batch(trial)[:, k - 1] >= REPAIR_TARGET**k)
        idx = np.flatnonzero(todo)
        todo[idx[ok]] = False
        if not todo.any():
            break
        delta[todo] *= 2.0
    u = u.copy()
    u[bad] -= delta
    return u, int(bad.size)


def _repair(op, u, k, tau, passes):
    """Lower inadmissible nodes by the smallest amount that puts their own Hessian in the cone.

    A minimal shift disturbs the neighbours as little as possible; a node's
    Hessian moves by ``delta * D`` where ``D`` is its self-coupling, which is
    positive on the diagonal.
    """
    count = 0
    for _ in range(passes):
        u, n = _repair_pass(op, u, k, tau)
        if n == 0:
            return u, count
        count += n
    _, _, _, adm = _evaluate(op, u, k, tau)
    if not adm.all():
        raise NotAdmissible(f"{int((~adm).sum())} nodes remain outside the cone after repair")
    return u, count


EPS_MACH = np.finfo(float).eps


def _roundoff_floor(op: StencilOperator, u: np.ndarray) -> np.ndarray:
    """Per-node size of the rounding error in the discrete Hessian entries.

    Nodes next to a nearly touching boundary carry stencil weights of order
    1/(theta h^2), so their residual cannot be driven below this level.
    """
    au = np.abs(u)
    floor = np.zeros(op.n_active)
    for A, b in op.second.values():
        floor = np.maximum(floor, abs(A) @ au + np.abs(b))
    return 16.0 * EPS_MACH * floor


def _newton_stage(op, u, k, target, tol, max_iter, opts, rep, floor=0.0):
    """Damped Newton for sigma_k^(1/k) = target; returns (last admissible iterate, converged)."""
    d = op.grid.dim
    H, coeffs, F, _ = _evaluate(op, u, k, opts.cone_tol)
    R = F + 1.0 - target
    norm = float(np.max(np.abs(R)))
    for _ in range(max_iter):
        if np.max(np.abs(R) - floor) <= tol:
            break
        rep.iterations += 1
        J = _jacobian(op, H, coeffs, k)
        step = _linear_solve(J, -R, d, opts.linear_rtol)
        alpha = 1.0
        while alpha >= HOMOTOPY_DAMPING_FLOOR:
            trial = u + alpha * step
            Ht, ct, Ft, admt = _evaluate(op, trial, k, opts.cone_tol)
            Rt = Ft + 1.0 - target
            nt = float(np.max(np.abs(Rt)))
            if admt.all() and nt < norm:
                break
            alpha *= 0.5
        else:
            rep.damping_history.append(0.0)
            return u, False
        rep.damping_history.append(alpha)
        u, H, coeffs, R, norm = trial, Ht, ct, Rt, nt
    return u, bool(np.max(np.abs(R) - floor) <= tol)


# a stage accepts steps down to this damping; smaller steps mean the target moved too far
HOMOTOPY_DAMPING_FLOOR = 1.0 / 64
HOMOTOPY_STAGE_TOL = 0.3
HOMOTOPY_STAGE_ITERS = 5
HOMOTOPY_FINAL_ITERS = 30


def _homotopy(op, u0, k, opts, rep):
    """Continuation in the right-hand side from the start's own sigma_k to 1.

    The start solves sigma_k^(1/k) = g0 exactly; the stage targets are
    g0^(1 - t), so every intermediate problem has a positive right-hand side
    and its solution stays inside the cone.
    """
    _, _, F, _ = _evaluate(op, u0, k, opts.cone_tol)
    log_g0 = np.log(F + 1.0)
    t, dt, u = 0.0, 0.1, u0
    while t < 1.0:
        t_next = min(1.0, t + dt)
        final = t_next == 1.0
        target = np.exp((1.0 - t_next) * log_g0)
        before = rep.iterations
        if final:
            floor = _roundoff_floor(op, u)
            u, done = _newton_stage(op, u, k, target, opts.tol, HOMOTOPY_FINAL_ITERS, opts, rep, floor)
        else:
            u, done = _newton_stage(op, u, k, target, HOMOTOPY_STAGE_TOL, HOMOTOPY_STAGE_ITERS, opts, rep)
        used = rep.iterations - before
        if rep.iterations > opts.max_iter:
            raise Diverged(f"homotopy exceeded {opts.max_iter} Newton iterations at t={t:.3g}")
        if not done:
            # the partial iterate is admissible, so the retry starts from it
            dt *= 0.5
            if dt < 1e-4:
                raise Diverged(f"homotopy stalled at t={t:.3g}")
            continue
        t = t_next
        rep.homotopy_stages += 1
        if used <= 2:
            dt *= 2.0
        elif used <= 3:
            dt *= 1.5
    return u


def _solve(
    op: StencilOperator, u0: np.ndarray, k: int, opts: SolveOptions, method: str = "newton"
) -> tuple[np.ndarray, SolveReport]:
    t0 = time.perf_counter()
    rep = SolveReport(degenerate_mixed=op.degenerate_mixed)
    d = op.grid.dim
    if k == 1:
        L, b = op.laplacian
        u = _linear_solve(L.tocsc(), 1.0 - b, d, opts.linear_rtol)
        rep.iterations = 1
        rep.damping_history.append(1.0)
        rep.residual_inf = float(np.max(np.abs(L @ u + b - 1.0)))
        rep.converged = rep.residual_inf <= max(opts.tol, 1e-8)
        rep.wall_time = time.perf_counter() - t0
        return u, rep

    u, rep.repairs = _repair(op, u0.copy(), k, opts.cone_tol, opts.repair_passes)
    if method == "homotopy":
        u = _homotopy(op, u, k, opts, rep)
        _, _, F, _ = _evaluate(op, u, k, opts.cone_tol)
        rep.residual_inf = float(np.max(np.abs(F)))
        rep.roundoff_floor = float(np.max(_roundoff_floor(op, u)))
        rep.converged = True
        rep.wall_time = time.perf_counter() - t0
        return u, rep

    H, coeffs, F, adm = _evaluate(op, u, k, opts.cone_tol)
    norm = float(np.max(np.abs(F)))
    tau = opts.pseudo_tau_factor * op.grid.h**2
    for it in range(1, opts.max_iter + 1):
        rep.iterations = it
        if norm <= opts.tol:
            break
        J = _jacobian(op, H, coeffs, k)
        delta = _linear_solve(J, -F, d, opts.linear_rtol)
        alpha = 1.0
        accepted = False
        while alpha >= opts.damping_floor:
            trial = u + alpha * delta
            Ht, ct, Ft, admt = _evaluate(op, trial, k, opts.cone_tol)
            nt = float(np.max(np.abs(Ft)))
            if admt.all() and nt < norm:
                accepted = True
                break
            alpha *= 0.5
        if accepted:
            u, H, coeffs, F, norm = trial, Ht, ct, Ft, nt
            rep.damping_history.append(alpha)
            log.debug("newton it=%d alpha=%.3g res=%.3e", it, alpha, norm)
            continue
        rep.damping_history.append(0.0)
        step_tau = tau
        for _ in range(opts.pseudo_steps):
            trial = u + step_tau * F
            Ht, ct, Ft, admt = _evaluate(op, trial, k, opts.cone_tol)
            if not admt.all():
                step_tau *= 0.5
                continue
            u, H, coeffs, F = trial, Ht, ct, Ft
            rep.pseudo_time_steps += 1
        norm = float(np.max(np.abs(F)))
    rep.residual_inf = norm
    rep.converged = norm <= opts.tol
    rep.wall_time = time.perf_counter() - t0
    if not rep.converged:
        raise Diverged(f"no convergence after {rep.iterations} iterations, residual {norm:.3e}")
    return u, rep


def _full_values(op: StencilOperator, u: np.ndarray, M: float | None) -> np.ndarray:
    vals = op.scatter(u)
    if M is not None:
        vals[op.grid.node_class == HOLE] = -M
    return vals


def solve_hole_free(outer: ConvexDomain, grid: Grid, k: int, options: SolveOptions | None = None) -> GridField:
    """psi_h: sigma_k = 1 in the outer domain, zero on its boundary."""
    opts = options or SolveOptions()
    grid = classify_nodes(grid, outer)
    op = StencilOperator(grid, outer)
    d = grid.dim
    # Poisson start: exact for balls and ellipsoids
    L, b = op.laplacian
    rhs = d * barriers.quad_coeff(d, k) * np.ones(op.n_active) - b
    u0 = _linear_solve(L.tocsc(), rhs, d, opts.linear_rtol)
    u, rep = _solve(op, u0, k, opts)
    f = GridField(grid, _full_values(op, u, None), k, outer, None, report=rep)
    f.__dict__["operator"] = op
    return f


def hole_scaling_factor(psi: GridField, ring: RingDomain, M: float) -> float:
    """Smallest factor >= 1 with factor * psi <= -M on and just around the hole."""
    X = psi.grid.coords
    dist = np.linalg.norm(X - np.asarray(ring.hole_center), axis=-1)
    near = (dist <= ring.hole_radius + psi.grid.h) & np.isfinite(psi.values)
    top = float(np.max(psi.values[near]))
    if top >= 0:
        raise NotAdmissible("psi is not negative near the hole")
    return max(1.0, M / -top)


def smooth_max(a, b, width: float):
    """C^2 convex upper envelope of max(a, b), differing from it only where |a - b| < width.

    Written as (a + b)/2 + rho(a - b) with rho convex, even and 1-Lipschitz
    after halving, so the result is convex and nondecreasing in both
    arguments; a blend of convex functions stays convex.
    """
    s = np.asarray(a) - np.asarray(b)
    t = np.clip(s / width, -1.0, 1.0)
    inner = width * (15.0 / 16.0) * (t**2 / 2 - t**4 / 6 + t**6 / 30) + width * 5.0 / 32.0
    rho = np.where(np.abs(s) >= width, 0.5 * np.abs(s), inner)
    return 0.5 * (a + b) + rho


# the blended start uses the lower barrier at reduced curvature and a deepened
# scaled psi so that the blend region sits strictly inside the cone
BLEND_BARRIER_CURVATURE = 0.5
BLEND_PSI_EXTRA = 0.5
BLEND_MAX_WIDTH = 0.5


def blended_start(ring: RingDomain, grid: Grid, M: float, k: int, psi: GridField) -> np.ndarray:
    """Smooth convex start: blend of a flattened lower barrier and a deepened multiple of psi."""
    d = grid.dim
    r2 = np.sum((grid.coords - np.asarray(ring.hole_center)) ** 2, axis=-1)
    lower = BLEND_BARRIER_CURVATURE * 0.5 * barriers.quad_coeff(d, k) * (r2 - ring.hole_radius**2) - M
    C = hole_scaling_factor(psi, ring, M) * (1.0 + BLEND_PSI_EXTRA)
    scaled = C * np.nan_to_num(psi.values, nan=0.0)
    return smooth_max(lower, scaled, min(BLEND_MAX_WIDTH, 0.4 * M))


def solve_ring(
    ring: RingDomain,
    grid: Grid,
    M: float,
    k: int,
    options: SolveOptions | None = None,
    psi: GridField | None = None,
    initial: np.ndarray | None = None,
) -> tuple[GridField, SolveReport]:
    """Solve sigma_k = 1 on the ring with u = 0 outside and u = -M on the hole.

    For k >= 2 the start is repaired into the cone and then continued in the
    right-hand side to sigma_k = 1; a pointwise-max start has kinks whose
    residual is too large for plain damped Newton to remove.
    """
    opts = options or SolveOptions()
    grid = classify_nodes(grid, ring)
    op = StencilOperator(grid, ring, inner_value=-M)
    starts = []
    if initial is not None:
        starts.append(("given", lambda: initial))
    elif k > 1:

        def blend():
            nonlocal psi
            if psi is None:
                psi = solve_hole_free(ring.outer, replace(grid, node_class=None), k, opts)
            return blended_start(ring, grid, M, k, psi)

        starts.append(("blend", blend))
        starts.append(("lower_barrier", lambda: barriers.lower_barrier(grid.coords, ring.hole_radius, M, grid.dim, k, ring.hole_center)))
    else:
        starts.append(("linear", lambda: None))
    method = "homotopy" if k > 1 else "newton"
    failure = None
    for label, make in starts:
        u0 = make()
        try:
            u, rep = _solve(op, op.gather(u0) if u0 is not None else np.zeros(op.n_active), k, opts, method)
        except (NotAdmissible, Diverged) as exc:
            if label == "given":
                raise
            log.info("start %s failed (%s), trying the next one", label, exc)
            failure = exc
            continue
        rep.initialization = label
        break
    else:
        raise failure
    f = GridField(grid, _full_values(op, u, M), k, ring, M, report=rep)
    f.__dict__["operator"] = op
    return f, rep


def argmin_node(field: GridField, tol: float = 1e-12) -> tuple:
    """Lexicographically smallest node index among values within tol of the minimum."""
    vals = np.where(np.isfinite(field.values), field.values, np.inf)
    vmin = vals.min()
    flat = int(np.flatnonzero(vals.ravel() <= vmin + tol)[0])
    return tuple(int(i) for i in np.unravel_index(flat, field.grid.shape))


def gradient_norms(field: GridField) -> np.ndarray:
    """|D_h u| at active nodes scattered onto the grid (NaN elsewhere)."""
    g = field.gradients()
    return field.operator.scatter(np.linalg.norm(g, axis=-1))


def gradient_max_location(field: GridField):
    """(node index, node class) of the largest discrete gradient."""
    gn = gradient_norms(field)
    flat = int(np.nanargmax(gn))
    idx = np.unravel_index(flat, field.grid.shape)
    return tuple(int(i) for i in idx), int(field.grid.node_class[idx])


def field_exterior_mask(field: GridField) -> np.ndarray:
    return field.grid.node_class == EXTERIOR
