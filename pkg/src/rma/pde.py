"""Steady heat conduction with log-conductivity ``u``.

Weak form, P1 elements, one-point quadrature for ``exp(u)``::

    (exp(u) grad w, grad v) + Bi <w, v>_{Robin} = <1, v>_{flux}

Every forward, adjoint or incremental solve bumps ``solve_counter``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import FLUX, ROBIN, Mesh


class ForwardProblem:
    """Forward model, observation operator and solve accounting.

    Not thread safe: the solve counter and the factorization cache are
    mutable. Use one instance per thread.
    """

    def __init__(self, mesh: Mesh, bi: float = 0.1, observation_mask=None):
        if not bi > 0:
            raise ValueError("Biot number must be positive")
        self.mesh = mesh
        self.bi = float(bi)
        if observation_mask is None:
            observation_mask = np.ones(mesh.num_nodes, dtype=bool)
        mask = np.asarray(observation_mask, dtype=bool)
        if mask.shape != (mesh.num_nodes,):
            raise ValueError("observation mask must have one entry per node")
        if not mask.any():
            raise ValueError("observation mask selects no nodes")
        self.observation_mask = mask
        self.observed = np.flatnonzero(mask)
        self.solve_counter = 0
        self._rows, self._cols = mesh.element_pattern()
        self._robin = self._boundary_mass(ROBIN) * self.bi
        self._load = self._boundary_load()
        self._factor_key = None
        self._factor = None

    @property
    def num_observations(self) -> int:
        return self.observed.size

    def _boundary_mass(self, tag):
        m = self.mesh
        sel = m.facet_tags == tag
        f, meas = m.facets[sel], m.facet_measures[sel]
        n = m.num_nodes
        if m.dim == 1:
            return sp.csr_matrix((np.ones(len(f)), (f[:, 0], f[:, 0])), shape=(n, n))
        blocks = meas[:, None, None] * (np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0)
        rows = np.repeat(f, 2, axis=1).ravel()
        cols = np.tile(f, (1, 2)).ravel()
        return sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(n, n))

    def _boundary_load(self):
        m = self.mesh
        sel = m.facet_tags == FLUX
        f, meas = m.facets[sel], m.facet_measures[sel]
        load = np.zeros(m.num_nodes)
        np.add.at(load, f.ravel(), np.repeat(meas / m.dim, m.dim))
        return load

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.mesh.num_nodes,):
            raise ValueError(f"parameter has shape {u.shape}, mesh has {self.mesh.num_nodes} nodes")
        return u

    def _element_coeff(self, u):
        return np.exp(u[self.mesh.elements].mean(axis=1))

    def assemble(self, u):
        """Return ``(K(u), f)`` with K sparse SPD."""
        u = self._check(u)
        vals = self._element_coeff(u)[:, None, None] * self.mesh.element_stiffness
        n = self.mesh.num_nodes
        K = sp.coo_matrix((vals.ravel(), (self._rows, self._cols)), shape=(n, n)).tocsr()
        return K + self._robin, self._load.copy()

    def factor(self, u):
        """Cached sparse LU of K(u); only the most recent ``u`` is kept."""
        u = self._check(u)
        key = u.tobytes()
        if key != self._factor_key:
            K, _ = self.assemble(u)
            self._factor = spla.splu(K.tocsc())
            self._factor_key = key
        return self._factor

    def _solve(self, u, rhs):
        x = self.factor(u).solve(rhs)
        if not np.all(np.isfinite(x)):
            raise np.linalg.LinAlgError("forward operator is singular")
        self.solve_counter += 1
        return x

    def solve_forward(self, u) -> np.ndarray:
        return self._solve(u, self._load)

    def observe(self, w) -> np.ndarray:
        return np.asarray(w)[self.observed]

    def scatter(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.num_observations,):
            raise ValueError(f"expected {self.num_observations} observation values, got {y.shape}")
        full = np.zeros(self.mesh.num_nodes)
        full[self.observed] = y
        return full

    def solve_adjoint(self, u, rhs) -> np.ndarray:
        """Solve ``K(u) p = -scatter(rhs)``; K is symmetric."""
        return self._solve(u, -self.scatter(rhs))

    def coupling(self, u, w, du) -> np.ndarray:
        """``(dK/du . du) w``: derivative of the diffusion term in direction ``du``."""
        m = self.mesh
        scale = self._element_coeff(u) * du[m.elements].mean(axis=1)
        local = np.einsum("eij,ej->ei", m.element_stiffness, w[m.elements]) * scale[:, None]
        out = np.zeros(m.num_nodes)
        np.add.at(out, m.elements.ravel(), local.ravel())
        return out

    def coupling_transpose(self, u, w, lam) -> np.ndarray:
        """Adjoint of :meth:`coupling` with respect to ``du``."""
        m = self.mesh
        k = m.dim + 1
        g = self._element_coeff(u) * np.einsum(
            "ei,eij,ej->e", lam[m.elements], m.element_stiffness, w[m.elements]
        )
        out = np.zeros(m.num_nodes)
        np.add.at(out, m.elements.ravel(), np.repeat(g / k, k))
        return out

    def coupling_matrix(self, u, w) -> sp.csr_matrix:
        """Sparse matrix of :meth:`coupling` as a linear map of ``du``."""
        m = self.mesh
        k = m.dim + 1
        local = np.einsum("eij,ej->ei", m.element_stiffness, w[m.elements])
        vals = (self._element_coeff(u) / k)[:, None, None] * np.repeat(local[:, :, None], k, axis=2)
        n = m.num_nodes
        return sp.coo_matrix((vals.ravel(), (self._rows, self._cols)), shape=(n, n)).tocsr()

    def jacobian_matrix(self, u, w) -> np.ndarray:
        """Dense ``dF/du``; costs one incremental solve per parameter."""
        u = self._check(u)
        C = self.coupling_matrix(u, w).toarray()
        dW = self.factor(u).solve(C)
        self.solve_counter += C.shape[1]
        return -dW[self.observed]

    def jacobian_action(self, u, w, du) -> np.ndarray:
        """Linearized observations ``dF/du . du``; ``w`` must be the state at ``u``."""
        u = self._check(u)
        du = self._check(du)
        dw = -self._solve(u, self.coupling(u, w, du))
        return self.observe(dw)

    def jacobian_transpose_action(self, u, w, dd) -> np.ndarray:
        u = self._check(u)
        lam = self._solve(u, self.scatter(dd))
        return -self.coupling_transpose(u, w, lam)

    def parameter_to_observable(self, u) -> np.ndarray:
        return self.observe(self.solve_forward(u))


def boundary_mask(mesh: Mesh) -> np.ndarray:
    """Observation mask selecting boundary nodes only."""
    mask = np.zeros(mesh.num_nodes, dtype=bool)
    mask[mesh.boundary_nodes] = True
    return mask
