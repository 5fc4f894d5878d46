import numpy as np
import pytest

from rma.objective import Objective
from rma.optimizer import HISTORY_FIELDS, SolverConfig, cg_solve, minimize


class Quadratic:
    """``0.5 u.Hu - b.u`` exposing the optimizer protocol."""

    def __init__(self, H, b):
        self.H, self.b = H, b
        self.pde_solves = 0

    @property
    def num_parameters(self):
        return self.b.size

    def cost(self, u):
        return 0.5 * u @ self.H @ u - self.b @ u

    def gradient(self, u):
        return self.H @ u - self.b

    def gn_hessian_action(self, u, v):
        return self.H @ v

    def preconditioner(self, v):
        return v


def _spd(n, seed, cond=100.0):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(np.geomspace(1, cond, n)) @ Q.T


def test_cg_identity_one_iteration():
    g = np.arange(1.0, 6.0)
    p, it, flag = cg_solve(lambda v: v, g, 1e-12, 10)
    assert (it, flag) == (1, "converged")
    assert np.allclose(p, -g)


def test_cg_dense_system():
    H = _spd(20, 0)
    g = np.random.default_rng(1).standard_normal(20)
    for reorth in (False, True):
        p, it, flag = cg_solve(lambda v: H @ v, g, 1e-10, 200, reorthogonalize=reorth)
        assert flag == "converged"
        assert np.linalg.norm(H @ p + g) <= 1e-10 * np.linalg.norm(g)


def test_cg_preconditioned_norm_and_validation():
    H = _spd(10, 2)
    g = np.ones(10)
    Hinv = np.linalg.inv(H)
    p, it, flag = cg_solve(lambda v: H @ v, g, 1e-8, 20, precond=lambda v: Hinv @ v,
                           norm="preconditioned")
    assert it == 1 and np.allclose(p, -Hinv @ g)
    with pytest.raises(ValueError):
        cg_solve(lambda v: v, g, 0.1, 5, norm="energy")


def test_cg_zero_rhs():
    p, it, flag = cg_solve(lambda v: v, np.zeros(4), 0.1, 5)
    assert it == 0 and flag == "converged" and not p.any()


def test_cg_negative_curvature():
    H = np.diag([1.0, -1.0, 2.0])
    g = np.array([0.0, 1.0, 0.0])
    p, it, flag = cg_solve(lambda v: H @ v, g, 1e-8, 10)
    assert flag == "negative_curvature" and it == 0
    assert g @ p < 0


def test_cg_maxiter():
    H = _spd(30, 3, cond=1e4)
    _, it, flag = cg_solve(lambda v: H @ v, np.ones(30), 1e-14, 3)
    assert (it, flag) == (3, "maxiter")


def test_minimize_quadratic_matches_solve():
    H = _spd(20, 4)
    b = np.random.default_rng(5).standard_normal(20)
    rep = minimize(Quadratic(H, b), np.zeros(20),
                   SolverConfig(tol_grad=1e-10, tol_cost=1e-14, tol_step=1e-14, precondition=False))
    assert rep.converged
    assert np.allclose(rep.u_final, np.linalg.solve(H, b), rtol=1e-8)
    assert rep.pde_solves == 0


def test_prior_only_converges_immediately(small2d):
    obj = Objective(small2d, misfit_weight=0.0)
    u0 = np.random.default_rng(6).standard_normal(small2d.forward.mesh.num_nodes)
    rep = minimize(obj, u0)
    assert rep.converged and rep.newton_iters <= 2
    assert np.linalg.norm(rep.u_final - small2d.prior.u0) <= 1e-6 * np.linalg.norm(u0)


def test_solve_ledger_is_exact(small2d):
    obj = Objective(small2d)
    c = small2d.forward.solve_counter
    rep = minimize(obj, np.zeros(small2d.forward.mesh.num_nodes))
    assert rep.pde_solves == small2d.forward.solve_counter - c
    # initial cost and gradient, then per iteration: 2 per CG step, the
    # line-search forwards and one adjoint for the new gradient
    steps = rep.history[1:]
    expected = 2 + sum(2 * h.cg_iters + h.linesearch_forwards + 1 for h in steps)
    assert rep.pde_solves == expected
    assert [h.pde_solves for h in rep.history] == sorted(h.pde_solves for h in rep.history)
    assert rep.history[-1].pde_solves == rep.pde_solves


def test_cost_is_monotone(small2d):
    rep = minimize(Objective(small2d), np.zeros(small2d.forward.mesh.num_nodes))
    costs = [h.cost for h in rep.history]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert rep.converged and rep.reason in {"gradient", "cost", "step"}


def test_deterministic(small1d):
    a = minimize(Objective(small1d), np.zeros(41))
    b = minimize(Objective(small1d), np.zeros(41))
    assert np.array_equal(a.u_final, b.u_final)
    assert a.history_csv() == b.history_csv()
    assert a.history_csv().splitlines()[0] == ",".join(HISTORY_FIELDS)


def test_max_newton_reported(small2d):
    rep = minimize(Objective(small2d), np.zeros(small2d.forward.mesh.num_nodes),
                   SolverConfig(max_newton=1, tol_cost=1e-14, tol_grad=1e-14, tol_step=1e-14))
    assert rep.newton_iters == 1 and not rep.converged and rep.reason == "max_newton"
    d = rep.to_dict()
    assert d["newton_iters"] == 1 and len(d["history"]) == 2


def test_linesearch_failure_reported():
    class Broken(Quadratic):
        def cost(self, u):
            return 0.0 if not u.any() else 1.0

    rep = minimize(Broken(np.eye(3), np.ones(3)), np.zeros(3), SolverConfig(max_backtrack=4))
    assert rep.reason == "linesearch" and not rep.converged
    assert rep.history[-1].linesearch_forwards == 5


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol_grad=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_newton=0)
