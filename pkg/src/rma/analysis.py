"""Statistical checks on sketched solutions: discrepancy quotients, the
Morozov range, a dense linear oracle, convergence rates and bias."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .objective import InverseProblem, Objective
from .optimizer import SolverConfig, minimize
from .sketch import SketchDistribution, SketchMatrix, build_sketch, failure_probability

ACHLIOPTAS = SketchDistribution.from_name("achlioptas")


def trial_seed(base_seed: int, index: int) -> int:
    """Seed for trial ``index`` derived from ``base_seed`` alone, so results
    do not depend on scheduling order."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1, np.uint64)[0])


def discrepancy_quotient(misfit_sq: float, N: int) -> float:
    if N < 1:
        raise ValueError("N must be positive")
    return float(misfit_sq) / N


def discrepancy_tau(problem: InverseProblem, u) -> float:
    """``||d_hat - F_hat(u)||^2 / N``; one forward solve."""
    r = problem.whitened_misfit(u)
    return discrepancy_quotient(float(r @ r), problem.N)


def morozov_range(tau_prime: float, epsilon: float) -> tuple[float, float]:
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    return tau_prime / (1.0 + epsilon), tau_prime / (1.0 - epsilon)


@dataclass(frozen=True)
class MorozovRecord:
    N: int
    n: int
    Jn_misfit: float
    J_misfit: float
    epsilon: float
    seed: int | None = None
    pde_solves: int | None = None

    @property
    def tau_prime(self) -> float:
        return self.Jn_misfit / self.N

    @property
    def tau(self) -> float:
        return self.J_misfit / self.N

    @property
    def tau_range(self) -> tuple[float, float]:
        return morozov_range(self.tau_prime, self.epsilon)

    @property
    def p(self) -> float:
        """Guaranteed success probability ``1 - exp(-n eps^2 / 8)``."""
        return 1.0 - failure_probability(self.n, self.epsilon)

    @property
    def inside(self) -> bool:
        lo, hi = self.tau_range
        return lo <= self.tau <= hi


TABLE_FIELDS = ("trial", "seed", "N", "n", "J_n", "tau_prime", "range_lo", "range_hi",
                "p", "J", "tau", "inside", "pde_solves")


@dataclass
class MorozovStudy:
    records: list[MorozovRecord]

    @property
    def success_rate(self) -> float:
        return float(np.mean([r.inside for r in self.records]))

    @property
    def mean_tau_prime(self) -> float:
        return float(np.mean([r.tau_prime for r in self.records]))

    @property
    def p(self) -> float:
        return self.records[0].p

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_FIELDS)
        for i, r in enumerate(self.records):
            lo, hi = r.tau_range
            w.writerow([i, r.seed, r.N, r.n, repr(r.Jn_misfit), repr(r.tau_prime), repr(lo),
                        repr(hi), repr(r.p), repr(r.J_misfit), repr(r.tau), int(r.inside),
                        r.pde_solves])
        return buf.getvalue()


def morozov_trial(problem: InverseProblem, sketch: SketchMatrix, epsilon: float,
                  cfg: SolverConfig | None = None, u_init=None) -> MorozovRecord:
    """Solve the sketched problem once and record both discrepancy quotients."""
    u_init = problem.prior.u0 if u_init is None else u_init
    report = minimize(Objective(problem, sketch), u_init, cfg)
    r = problem.whitened_misfit(report.u_final)
    Sr = sketch.apply(r)
    return MorozovRecord(problem.N, sketch.n, float(Sr @ Sr), float(r @ r), epsilon,
                         sketch.seed, report.pde_solves)


def morozov_verify(problem: InverseProblem, dist: SketchDistribution, n: int, epsilon: float,
                   trials: int, seed: int, cfg: SolverConfig | None = None) -> MorozovStudy:
    records = [
        morozov_trial(problem, build_sketch(dist, n, problem.N, trial_seed(seed, t)), epsilon, cfg)
        for t in range(trials)
    ]
    return MorozovStudy(records)


@dataclass
class TuningResult:
    n: int
    mean_tau_prime: float
    history: list[tuple[int, float]] = field(default_factory=list)


def tune_sketch_dimension(evaluate, lo: int, hi: int, target: float = 1.0,
                          window: tuple[float, float] = (0.9, 1.1), max_steps: int = 12) -> TuningResult:
    """Bisect on ``n`` so that ``evaluate(n)`` (a pilot mean of tau') approaches ``target``.

    Assumes tau' grows with ``n``. Stops early once a pilot mean lands in
    ``window``; otherwise returns the probed ``n`` closest to ``target``.
    """
    if not 1 <= lo <= hi:
        raise ValueError("need 1 <= lo <= hi")
    history = []

    def probe(n):
        value = float(evaluate(n))
        history.append((n, value))
        return value

    for n in (hi, lo):
        v = probe(n)
        if window[0] <= v <= window[1]:
            return TuningResult(n, v, history)
    if history[0][1] < target or history[1][1] > target:
        n, v = min(history, key=lambda h: abs(h[1] - target))
        return TuningResult(n, v, history)
    a, b = lo, hi
    for _ in range(max_steps):
        if b - a <= 1:
            break
        mid = (a + b) // 2
        v = probe(mid)
        if window[0] <= v <= window[1]:
            return TuningResult(mid, v, history)
        a, b = (mid, b) if v < target else (a, mid)
    best = min(history, key=lambda h: abs(h[1] - target))
    return TuningResult(best[0], best[1], history)


class LinearOracle:
    """Dense quadratic surrogate of an inverse problem linearized at ``u_lin``.

    The data are shifted so that ``F_hat u`` reproduces the linearized
    forward map: ``d_eff = d_hat - F_hat(u_lin) + J_hat u_lin``. Costs follow
    the objective convention ``0.5 ||S(d - F u)||^2 + 0.5 ||u - u0||_R^2``.
    """

    MAX_PARAMETERS = 2000

    def __init__(self, F_hat, R, d_hat, u0, u_lin=None):
        self.F_hat = np.asarray(F_hat, dtype=float)
        self.R = np.asarray(R, dtype=float)
        self.d_hat = np.asarray(d_hat, dtype=float)
        self.u0 = np.asarray(u0, dtype=float)
        self.u_lin = self.u0 if u_lin is None else np.asarray(u_lin, dtype=float)
        N, m = self.F_hat.shape
        if self.R.shape != (m, m) or self.d_hat.shape != (N,) or self.u0.shape != (m,):
            raise ValueError("oracle blocks have inconsistent shapes")

    @property
    def N(self) -> int:
        return self.F_hat.shape[0]

    @property
    def num_parameters(self) -> int:
        return self.F_hat.shape[1]

    @cached_property
    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.F_hat))

    @cached_property
    def norm_F(self) -> float:
        return float(np.linalg.norm(self.F_hat, 2))

    @cached_property
    def u_star(self) -> np.ndarray:
        return normal_equations_solve(self)

    @cached_property
    def J_star(self) -> float:
        return self.cost(self.u_star)

    def _blocks(self, sketch):
        if sketch is None:
            return self.F_hat, self.d_hat
        if sketch.N != self.N:
            raise ValueError(f"sketch has N={sketch.N}, oracle has N={self.N}")
        return sketch.apply(self.F_hat), sketch.apply(self.d_hat)

    def cost(self, u, sketch: SketchMatrix | None = None) -> float:
        B, b = self._blocks(sketch)
        r = b - B @ u
        e = u - self.u0
        return 0.5 * float(r @ r) + 0.5 * float(e @ self.R @ e)

    def gauss_newton_matrix(self, sketch: SketchMatrix | None = None) -> np.ndarray:
        """``G^2 = F^T S^T S F + R``."""
        B, _ = self._blocks(sketch)
        return B.T @ B + self.R


class QuadraticObjective:
    """The oracle's (optionally sketched) quadratic cost behind the
    :func:`~rma.optimizer.minimize` interface. Hessian actions are dense
    products, so ``pde_solves`` stays zero."""

    pde_solves = 0

    def __init__(self, oracle: LinearOracle, sketch: SketchMatrix | None = None):
        self.oracle = oracle
        self.sketch = sketch
        self._B, self._b = oracle._blocks(sketch)
        self._R_chol = sla.cho_factor(oracle.R)

    @property
    def num_parameters(self) -> int:
        return self.oracle.num_parameters

    def cost(self, u) -> float:
        return self.oracle.cost(u, self.sketch)

    def gradient(self, u) -> np.ndarray:
        return self._B.T @ (self._B @ u - self._b) + self.oracle.R @ (u - self.oracle.u0)

    def gn_hessian_action(self, u, du) -> np.ndarray:
        return self._B.T @ (self._B @ du) + self.oracle.R @ du

    def preconditioner(self, v) -> np.ndarray:
        return sla.cho_solve(self._R_chol, v)


def linear_oracle_build(problem: InverseProblem, u_lin=None) -> LinearOracle:
    """Dense oracle from one forward solve and one incremental solve per parameter."""
    m = problem.forward.mesh.num_nodes
    if m > LinearOracle.MAX_PARAMETERS:
        raise ValueError(f"{m} parameters exceeds the dense oracle limit {LinearOracle.MAX_PARAMETERS}")
    u_lin = problem.prior.u0 if u_lin is None else np.asarray(u_lin, dtype=float)
    obj = Objective(problem)
    F_hat = obj.whitened_jacobian(u_lin)
    d_eff = obj.full_residual(u_lin) + F_hat @ u_lin
    return LinearOracle(F_hat, problem.prior.dense_precision(), d_eff, problem.prior.u0, u_lin)


def normal_equations_solve(oracle: LinearOracle, sketch: SketchMatrix | None = None) -> np.ndarray:
    """Minimizer of the (sketched) quadratic cost by a dense Cholesky solve."""
    B, b = oracle._blocks(sketch)
    rhs = B.T @ b + oracle.R @ oracle.u0
    return sla.cho_solve(sla.cho_factor(B.T @ B + oracle.R), rhs)


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


CONVERGENCE_FIELDS = ("n", "mean_abs_err_J", "mean_abs_err_u", "mean_rel_err_J", "mean_rel_err_u")


@dataclass
class ConvergenceStudy:
    n_list: list[int]
    err_J: np.ndarray
    err_u: np.ndarray
    J_star: float
    u_star_norm: float

    @property
    def slope_J(self) -> float:
        return loglog_slope(self.n_list, self.err_J)

    @property
    def slope_u(self) -> float:
        return loglog_slope(self.n_list, self.err_u)

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CONVERGENCE_FIELDS)
        for n, eJ, eu in zip(self.n_list, self.err_J, self.err_u):
            w.writerow([n, repr(float(eJ)), repr(float(eu)), repr(float(eJ / abs(self.J_star))),
                        repr(float(eu / self.u_star_norm))])
        return buf.getvalue()


def convergence_study(oracle: LinearOracle, n_list, trials: int, seed: int,
                      dist: SketchDistribution = ACHLIOPTAS) -> ConvergenceStudy:
    """Trial-averaged ``|J*_n - J*|`` and ``||u*_n - u*||`` for each ``n``."""
    n_list = [int(n) for n in n_list]
    err_J = np.zeros(len(n_list))
    err_u = np.zeros(len(n_list))
    for i, n in enumerate(n_list):
        for t in range(trials):
            sk = build_sketch(dist, n, oracle.N, trial_seed(seed, i * trials + t))
            u_n = normal_equations_solve(oracle, sk)
            err_J[i] += abs(oracle.cost(u_n, sk) - oracle.J_star)
            err_u[i] += np.linalg.norm(u_n - oracle.u_star)
    return ConvergenceStudy(n_list, err_J / trials, err_u / trials, oracle.J_star,
                            float(np.linalg.norm(oracle.u_star)))


@dataclass
class BiasResult:
    n: int
    values: np.ndarray
    J_star: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def stderr(self) -> float:
        return float(np.std(self.values, ddof=1) / math.sqrt(self.values.size))

    @property
    def upper_bound(self) -> float:
        """One-sided two-standard-error bound on the mean."""
        return self.mean + 2.0 * self.stderr


def bias_check(oracle: LinearOracle, n: int, trials: int, seed: int,
               dist: SketchDistribution = ACHLIOPTAS) -> BiasResult:
    """Sample of optimal sketched values ``J*_n`` over independent sketches."""
    if trials < 2:
        raise ValueError("need at least two trials for a standard error")
    vals = np.empty(trials)
    for t in range(trials):
        sk = build_sketch(dist, n, oracle.N, trial_seed(seed, t))
        vals[t] = oracle.cost(normal_equations_solve(oracle, sk), sk)
    return BiasResult(int(n), vals, oracle.J_star)


def theorem_error_bound(oracle: LinearOracle, sketch: SketchMatrix | None, epsilon: float) -> float:
    """``eps / lambda_min(G^2) * (||F|| ||u*|| + ||d||) * ||F||`` with
    ``G^2 = F^T S^T S F + R``; bounds ``||u*_n - u*||``."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    G2 = oracle.gauss_newton_matrix(sketch)
    lam_min = float(sla.eigh(G2, eigvals_only=True, subset_by_index=[0, 0])[0])
    nF = oracle.norm_F
    return epsilon / lam_min * (nF * float(np.linalg.norm(oracle.u_star))
                                + float(np.linalg.norm(oracle.d_hat))) * nF
