"""Gaussian prior with covariance ``A^{-2}``, ``A = gamma (-Laplace) + delta``.

Discretely the precision is ``R = A_h M_L^{-1} A_h`` where ``A_h`` is the P1
matrix of ``A`` with natural boundary conditions and ``M_L`` the lumped mass.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh


class Prior:
    """Prior cost, gradient, precision and covariance actions, and sampling."""

    def __init__(self, mesh: Mesh, gamma: float = 0.1, delta: float = 1.0, u0=None):
        if not (gamma > 0 and delta > 0):
            raise ValueError("gamma and delta must be positive")
        self.mesh = mesh
        self.gamma = float(gamma)
        self.delta = float(delta)
        n = mesh.num_nodes
        self.u0 = np.zeros(n) if u0 is None else self._check(u0).copy()

        rows, cols = mesh.element_pattern()
        stiff = sp.coo_matrix((mesh.element_stiffness.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        mass = sp.coo_matrix((mesh.element_mass.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        self.mass = mass
        self.lumped_mass = np.asarray(mass.sum(axis=1)).ravel()
        self.A = (self.gamma * stiff + self.delta * mass).tocsc()
        self.R = (self.A @ sp.diags(1.0 / self.lumped_mass) @ self.A).tocsr()
        self._A_lu = spla.splu(self.A)

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.mesh.num_nodes,):
            raise ValueError(f"field has shape {u.shape}, mesh has {self.mesh.num_nodes} nodes")
        return u

    def cost(self, u) -> float:
        e = self._check(u) - self.u0
        Ae = self.A @ e
        return 0.5 * float(Ae @ (Ae / self.lumped_mass))

    def grad(self, u) -> np.ndarray:
        return self.R @ (self._check(u) - self.u0)

    def hess_action(self, du) -> np.ndarray:
        return self.R @ self._check(du)

    def apply_covariance(self, v) -> np.ndarray:
        """``R^{-1} v = A^{-1} M_L A^{-1} v``; sparse solves only, not PDE solves."""
        return self._A_lu.solve(self.lumped_mass * self._A_lu.solve(np.asarray(v, dtype=float)))

    def dense_precision(self) -> np.ndarray:
        return self.R.toarray()

    def sample(self, seed) -> np.ndarray:
        """``u0 + A^{-1} M_L^{1/2} xi`` with ``xi`` standard normal."""
        xi = np.random.default_rng(seed).standard_normal(self.mesh.num_nodes)
        return self.u0 + self._A_lu.solve(np.sqrt(self.lumped_mass) * xi)

    def sample_many(self, k: int, seed) -> np.ndarray:
        """``k`` samples as rows, from a single stream."""
        xi = np.random.default_rng(seed).standard_normal((self.mesh.num_nodes, k))
        return (self.u0[:, None] + self._A_lu.solve(np.sqrt(self.lumped_mass)[:, None] * xi)).T
