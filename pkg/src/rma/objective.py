"""Full and sketched MAP objectives with adjoint gradients and GN Hessians."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .pde import ForwardProblem
from .prior import Prior
from .sketch import SketchMatrix


@dataclass(eq=False)
class InverseProblem:
    forward: ForwardProblem
    prior: Prior
    data: np.ndarray
    sigma: float
    u_truth: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if not self.sigma > 0:
            raise ValueError("noise level sigma must be positive")
        if self.data.shape != (self.forward.num_observations,):
            raise ValueError(
                f"data has shape {self.data.shape}, expected ({self.forward.num_observations},)"
            )

    @property
    def N(self) -> int:
        return self.data.size

    @property
    def d_hat(self) -> np.ndarray:
        return self.data / self.sigma

    def whitened_misfit(self, u) -> np.ndarray:
        """``(d - F(u)) / sigma``; one forward solve."""
        return self.d_hat - self.forward.parameter_to_observable(u) / self.sigma


def noise_level(observations, fraction: float) -> float:
    """Noise std as a fraction of the largest observed magnitude."""
    return float(fraction) * float(np.max(np.abs(observations)))


def synthesize_data(forward: ForwardProblem, u_truth, noise_fraction: float, seed):
    """Noisy observations of ``u_truth``. Returns ``(data, sigma)``."""
    clean = forward.parameter_to_observable(u_truth)
    sigma = noise_level(clean, noise_fraction)
    noise = np.random.default_rng(seed).standard_normal(clean.size)
    return clean + sigma * noise, sigma


class Objective:
    """``J(u)`` when ``sketch`` is None, else the sketched ``J_n(u)``.

    PDE-solve accounting lives on ``problem.forward.solve_counter``:
    :meth:`cost` is one forward solve, :meth:`gradient` one adjoint solve
    (plus a forward solve unless the state at ``u`` is cached from the last
    cost evaluation), :meth:`gn_hessian_action` two incremental solves.

    ``misfit_weight`` scales the data term; zero gives the prior-only
    objective. Instances hold caches and are not thread safe.
    """

    def __init__(self, problem: InverseProblem, sketch: SketchMatrix | None = None,
                 misfit_weight: float = 1.0):
        if sketch is not None and sketch.N != problem.N:
            raise ValueError(f"sketch has N={sketch.N}, data has N={problem.N}")
        self.problem = problem
        self.sketch = sketch
        self.misfit_weight = float(misfit_weight)
        self.trace: list[dict] = []
        self._state_key = None
        self._state = None
        self._residual = None

    @property
    def forward(self) -> ForwardProblem:
        return self.problem.forward

    @property
    def prior(self) -> Prior:
        return self.problem.prior

    @property
    def pde_solves(self) -> int:
        return self.forward.solve_counter

    @property
    def num_parameters(self) -> int:
        return self.forward.mesh.num_nodes

    def preconditioner(self, v) -> np.ndarray:
        """Prior covariance action, the CG preconditioner."""
        return self.prior.apply_covariance(v)

    @property
    def misfit_dim(self) -> int:
        return self.problem.N if self.sketch is None else self.sketch.n

    def _project(self, v):
        return v if self.sketch is None else self.sketch.apply(v)

    def _project_normal(self, v):
        """``Sigma^T Sigma v`` (identity without a sketch)."""
        if self.sketch is None:
            return v
        return self.sketch.apply_transpose(self.sketch.apply(v))

    def _evaluate_state(self, u):
        u = np.array(u, dtype=float)
        w = self.forward.solve_forward(u)
        self._state_key = u.tobytes()
        self._state = w
        self._residual = self.problem.d_hat - self.forward.observe(w) / self.problem.sigma
        return w

    def state(self, u):
        """Forward state at ``u``, solving only on a cache miss."""
        if np.asarray(u, dtype=float).tobytes() != self._state_key:
            self._evaluate_state(u)
        return self._state

    def full_residual(self, u) -> np.ndarray:
        """Unsketched whitened residual, reusing the cached state."""
        self.state(u)
        return self._residual

    def misfit_vector(self, u) -> np.ndarray:
        self._evaluate_state(u)
        return self._project(self._residual)

    def cost_terms(self, u):
        """``(misfit, prior)`` parts of the cost; one forward solve."""
        r = self.misfit_vector(u)
        return 0.5 * self.misfit_weight * float(r @ r), self.prior.cost(u)

    def cost(self, u) -> float:
        misfit, reg = self.cost_terms(u)
        self.trace.append({"event": "cost", "value": misfit + reg,
                           "pde_solves": self.forward.solve_counter})
        return misfit + reg

    def gradient(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        w = self.state(u)
        sigma = self.problem.sigma
        y = self.misfit_weight * self._project_normal(self._residual) / sigma
        p = self.forward.solve_adjoint(u, y)
        g = -self.forward.coupling_transpose(u, w, p) + self.prior.grad(u)
        self.trace.append({"event": "gradient", "norm": float(np.linalg.norm(g)),
                           "pde_solves": self.forward.solve_counter})
        return g

    def misfit_hessian_action(self, u, du) -> np.ndarray:
        """Gauss-Newton misfit Hessian action; two incremental solves."""
        u = np.asarray(u, dtype=float)
        w = self.state(u)
        sigma = self.problem.sigma
        Jdu = self.forward.jacobian_action(u, w, du)
        y = self.misfit_weight * self._project_normal(Jdu) / sigma**2
        return self.forward.jacobian_transpose_action(u, w, y)

    def gn_hessian_action(self, u, du) -> np.ndarray:
        return self.misfit_hessian_action(u, du) + self.prior.hess_action(du)

    def whitened_jacobian(self, u) -> np.ndarray:
        """Dense ``J_hat = (dF/du) / sigma``; one incremental solve per parameter."""
        w = self.state(u)
        return self.forward.jacobian_matrix(u, w) / self.problem.sigma

    def misfit_hessian_dense(self, u) -> np.ndarray:
        B = self._project(self.whitened_jacobian(u))
        return self.misfit_weight * (B.T @ B)

    def misfit_hessian_spectrum(self, u, k: int | None = None, method: str = "dense") -> np.ndarray:
        """Top ``k`` eigenvalues (descending) of the prior-preconditioned GN misfit Hessian.

        ``dense`` forms ``L^{-1} H L^{-T}`` with ``R = L L^T`` and returns all
        of them when ``k`` is None. ``lanczos`` runs ARPACK on the
        matrix-free action (two incremental solves per product).
        """
        m = self.forward.mesh.num_nodes
        k = m if k is None else int(k)
        if not 1 <= k <= m:
            raise ValueError(f"k must lie in [1, {m}]")
        if method == "dense":
            B = np.sqrt(self.misfit_weight) * self._project(self.whitened_jacobian(u))
            L = np.linalg.cholesky(self.prior.dense_precision())
            Z = sla.solve_triangular(L, B.T, lower=True).T
            lam = np.linalg.eigvalsh(Z.T @ Z)[::-1]
            return lam[:k]
        if method == "lanczos":
            if k >= m:
                raise ValueError("Lanczos needs k < number of parameters")
            self.state(u)
            H = spla.LinearOperator((m, m), matvec=lambda v: self.misfit_hessian_action(u, v.ravel()))
            Minv = spla.LinearOperator((m, m), matvec=lambda v: self.prior.apply_covariance(v.ravel()))
            lam = spla.eigsh(H, k=k, M=self.prior.R.tocsc(), Minv=Minv, which="LA",
                             return_eigenvectors=False)
            return np.sort(lam)[::-1]
        raise ValueError(f"unknown spectrum method {method!r}")
