"""Inexact Gauss-Newton-CG with Armijo backtracking and PDE-solve accounting."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .objective import Objective


@dataclass
class SolverConfig:
    """Termination tolerances are relative: cost decrease to ``|J|``,
    gradient norm to the initial gradient norm, step norm to ``max(1, ||u||)``."""

    tol_cost: float = 1e-6
    tol_grad: float = 1e-6
    tol_step: float = 1e-6
    max_newton: int = 200
    cg_max: int | None = None
    forcing_max: float = 0.5
    c_armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtrack: int = 30
    precondition: bool = True
    reorthogonalize: bool = True
    cg_norm: str = "euclidean"

    def __post_init__(self):
        if min(self.tol_cost, self.tol_grad, self.tol_step) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_newton < 1:
            raise ValueError("max_newton must be at least 1")


@dataclass
class IterationRecord:
    iter: int
    cost: float
    gradnorm: float
    cg_iters: int
    step_length: float
    linesearch_forwards: int
    pde_solves: int


HISTORY_FIELDS = ("iter", "cost", "gradnorm", "cg_iters", "pde_solves")


@dataclass
class SolveReport:
    u_final: np.ndarray
    newton_iters: int
    cg_iters: int
    pde_solves: int
    converged: bool
    reason: str
    history: list[IterationRecord] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def final_cost(self) -> float:
        return self.history[-1].cost

    @property
    def final_gradnorm(self) -> float:
        return self.history[-1].gradnorm

    def to_dict(self) -> dict:
        return {
            "newton_iters": self.newton_iters,
            "cg_iters": self.cg_iters,
            "pde_solves": self.pde_solves,
            "converged": self.converged,
            "reason": self.reason,
            "final_cost": self.final_cost,
            "final_gradnorm": self.final_gradnorm,
            "history": [asdict(h) for h in self.history],
        }

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for h in self.history:
            w.writerow([repr(getattr(h, f)) for f in HISTORY_FIELDS])
        return buf.getvalue()


def cg_solve(hess_action, g, forcing_tol, cg_max, precond=None, reorthogonalize=False,
             norm="euclidean"):
    """Approximately solve ``H p = -g`` by (preconditioned) CG.

    Stops once ``||H p + g|| <= forcing_tol * ||g||``, on non-positive
    curvature, or after ``cg_max`` iterations. ``norm="preconditioned"``
    measures the residual as ``sqrt(r . M r)`` instead.

    ``reorthogonalize`` keeps every residual and re-imposes M-orthogonality
    on the new one, so a rank-k update of the preconditioner's inverse is
    solved in at most k + 1 iterations despite rounding. Returns
    ``(p, iterations, flag)`` with flag one of ``"converged"``,
    ``"negative_curvature"`` or ``"maxiter"``.
    """
    if norm not in ("euclidean", "preconditioned"):
        raise ValueError(f"unknown residual norm {norm!r}")
    g = np.asarray(g, dtype=float)
    apply_m = precond if precond is not None else (lambda v: v)
    x = np.zeros_like(g)
    r = -g
    z = apply_m(r)
    d = z.copy()
    rz = float(r @ z)
    if rz == 0.0:
        return x, 0, "converged"
    if norm == "euclidean":
        tol2 = forcing_tol**2 * float(r @ r)
    else:
        tol2 = forcing_tol**2 * rz
    basis = [(r, z, rz)] if reorthogonalize else None
    for i in range(int(cg_max)):
        Hd = hess_action(d)
        curv = float(d @ Hd)
        if curv <= 0.0:
            if i == 0:
                x = d
            return x, i, "negative_curvature"
        alpha = rz / curv
        x = x + alpha * d
        r = r - alpha * Hd
        z = apply_m(r)
        if basis is not None:
            for rj, zj, rzj in basis:
                c = float(r @ zj) / rzj
                r = r - c * rj
                z = z - c * zj
        rz_new = float(r @ z)
        if basis is not None:
            basis.append((r, z, rz_new))
        if (float(r @ r) if norm == "euclidean" else rz_new) <= tol2:
            return x, i + 1, "converged"
        d = z + (rz_new / rz) * d
        rz = rz_new
    return x, int(cg_max), "maxiter"


def minimize(obj: Objective, u_init, cfg: SolverConfig | None = None) -> SolveReport:
    """Minimize ``obj`` from ``u_init``; see :class:`SolverConfig` for the stopping rules.

    ``obj`` needs ``cost``, ``gradient``, ``gn_hessian_action``,
    ``preconditioner``, ``num_parameters`` and a ``pde_solves`` counter.
    """
    cfg = cfg or SolverConfig()
    start = time.perf_counter()
    solves0 = obj.pde_solves
    cg_max = cfg.cg_max or obj.num_parameters
    precond = obj.preconditioner if cfg.precondition else None

    u = np.array(u_init, dtype=float)
    J = obj.cost(u)
    g = obj.gradient(u)
    gnorm0 = gnorm = float(np.linalg.norm(g))
    history = [IterationRecord(0, J, gnorm, 0, 0.0, 1, obj.pde_solves - solves0)]
    total_cg = 0
    converged, reason = False, "max_newton"

    for k in range(1, cfg.max_newton + 1):
        if gnorm <= cfg.tol_grad * gnorm0 or gnorm == 0.0:
            converged, reason = True, "gradient"
            break
        forcing = min(cfg.forcing_max, math.sqrt(gnorm / gnorm0))
        p, cg_it, _ = cg_solve(lambda v: obj.gn_hessian_action(u, v), g, forcing, cg_max, precond,
                               cfg.reorthogonalize, cfg.cg_norm)
        total_cg += cg_it
        slope = float(g @ p)
        if slope >= 0.0:
            p, slope = -g, -gnorm**2

        alpha, forwards, accepted = 1.0, 0, False
        for _ in range(cfg.max_backtrack + 1):
            u_try = u + alpha * p
            J_try = obj.cost(u_try)
            forwards += 1
            if J_try <= J + cfg.c_armijo * alpha * slope:
                accepted = True
                break
            alpha *= cfg.backtrack
        if not accepted:
            reason = "linesearch"
            history.append(IterationRecord(k, J, gnorm, cg_it, 0.0, forwards,
                                           obj.pde_solves - solves0))
            break

        step = alpha * float(np.linalg.norm(p))
        decrease = J - J_try
        u, J_prev, J = u_try, J, J_try
        g = obj.gradient(u)
        gnorm = float(np.linalg.norm(g))
        history.append(IterationRecord(k, J, gnorm, cg_it, alpha, forwards,
                                       obj.pde_solves - solves0))
        if decrease <= cfg.tol_cost * abs(J_prev):
            converged, reason = True, "cost"
            break
        if step <= cfg.tol_step * max(1.0, float(np.linalg.norm(u))):
            converged, reason = True, "step"
            break
    else:
        if gnorm <= cfg.tol_grad * gnorm0:
            converged, reason = True, "gradient"

    newton_iters = len(history) - 1
    return SolveReport(
        u_final=u,
        newton_iters=newton_iters,
        cg_iters=total_cg,
        pde_solves=obj.pde_solves - solves0,
        converged=converged,
        reason=reason,
        history=history,
        wall_time=time.perf_counter() - start,
    )
