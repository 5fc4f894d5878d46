"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line.

Run alone with ``python3 tests/test_acceptance.py`` or ``pytest -m acceptance``.
"""
import numpy as np
import pytest

from conftest import record_acceptance
from rma.analysis import (
    QuadraticObjective,
    bias_check,
    convergence_study,
    discrepancy_quotient,
    linear_oracle_build,
    morozov_range,
    morozov_verify,
    normal_equations_solve,
    trial_seed,
    tune_sketch_dimension,
)
from rma.mesh import interval_mesh
from rma.objective import Objective
from rma.optimizer import SolverConfig, minimize
from rma.pde import ForwardProblem
from rma.sketch import ALL_DISTRIBUTIONS, Kind, SketchDistribution, build_sketch, failure_probability

pytestmark = pytest.mark.acceptance
ACHLIOPTAS = SketchDistribution(Kind.ACHLIOPTAS)


def test_criterion_01_morozov_range():
    got = [tuple(round(v, 3) for v in morozov_range(t, 0.5)) for t in (1.190, 0.930)]
    ok = got == [(0.793, 2.380), (0.620, 1.860)]
    record_acceptance(1, ok, f"ranges {got}")
    assert ok


def test_criterion_02_failure_probability_table():
    got = [100 * (1 - failure_probability(n, 0.5)) for n in (100, 50, 75)]
    ok = all(abs(g - t) <= 0.1 for g, t in zip(got, (95.6, 79.0, 90.4)))
    record_acceptance(2, ok, "p = " + ", ".join(f"{g:.2f}%" for g in got))
    assert ok


def test_criterion_03_discrepancy_quotients():
    got = [discrepancy_quotient(a, b) for a, b in ((1074, 1025), (1406, 1333), (3928, 2474))]
    ok = all(abs(g - t) <= 1e-3 for g, t in zip(got, (1.048, 1.055, 1.588)))
    record_acceptance(3, ok, "tau = " + ", ".join(f"{g:.4f}" for g in got))
    assert ok


@pytest.mark.slow
def test_criterion_04_sandwich(desk2d):
    n, eps, trials = 100, 0.5, 2000
    obj = Objective(desk2d)
    u = desk2d.prior.u0  # the prior term vanishes, so this is the misfit alone
    r = obj.misfit_vector(u)
    J = obj.cost(u)
    limit = 1.5 * failure_probability(n, eps)
    rates = {}
    for dist in ALL_DISTRIBUTIONS:
        bad = 0
        for t in range(trials):
            Sr = build_sketch(dist, n, desk2d.N, trial_seed(4, t)).apply(r)
            Jn = 0.5 * float(Sr @ Sr)
            bad += not ((1 - eps) * J <= Jn <= (1 + eps) * J)
        rates[dist.name] = bad / trials
    ok = all(v <= limit for v in rates.values())
    detail = ", ".join(f"{k} {v:.4f}" for k, v in rates.items())
    record_acceptance(4, ok, f"N={desk2d.N} violation rates {detail} (limit {limit:.4f})")
    assert ok


@pytest.fixture(scope="module")
def desk_oracle(desk2d):
    return linear_oracle_build(desk2d)


@pytest.mark.slow
def test_criterion_05_convergence_rates(desk_oracle):
    study = convergence_study(desk_oracle, [10, 20, 50, 100, 200, 500], trials=5, seed=5)
    sJ, su = study.slope_J, study.slope_u
    ok = -0.65 <= sJ <= -0.35 and -0.65 <= su <= -0.35
    record_acceptance(5, ok, f"slope |J*_n-J*| {sJ:.3f}, slope ||u*_n-u*|| {su:.3f} "
                             f"(target [-0.65, -0.35]); rank(F)={desk_oracle.rank}")
    assert ok


@pytest.mark.slow
def test_criterion_06_downward_bias(desk_oracle):
    res = {n: bias_check(desk_oracle, n, trials=200, seed=6 + n) for n in (5, 20, 100)}
    J = desk_oracle.J_star
    below = all(r.mean <= J + 2 * r.stderr for r in res.values())
    a, b, c = res[5], res[20], res[100]
    monotone = (a.mean <= b.mean + 2 * np.hypot(a.stderr, b.stderr)
                and b.mean <= c.mean + 2 * np.hypot(b.stderr, c.stderr))
    ok = below and monotone
    detail = ", ".join(f"n={n} {r.mean:.3f}+-{r.stderr:.3f}" for n, r in res.items())
    record_acceptance(6, ok, f"J*={J:.2f}; mean J*_n {detail}")
    assert ok


@pytest.mark.slow
def test_criterion_07_statistical_morozov(desk2d):
    eps = 0.5

    def pilot(n):
        return morozov_verify(desk2d, ACHLIOPTAS, n, eps, trials=3, seed=70_000 + n).mean_tau_prime

    # tau' stays below 0.8 for n <= N on this problem, so the search extends past N
    tuned = tune_sketch_dimension(pilot, 10, 4 * desk2d.N)
    study = morozov_verify(desk2d, ACHLIOPTAS, tuned.n, eps, trials=50, seed=7)
    mean_tp, rate, p = study.mean_tau_prime, study.success_rate, study.p
    ok = 0.8 <= mean_tp <= 1.2 and rate >= p - 0.10
    record_acceptance(7, ok, f"tuned n={tuned.n} (N={desk2d.N}), mean tau'={mean_tp:.3f}, "
                             f"success {rate:.2f} vs p={p:.3f}")
    assert ok


@pytest.mark.slow
def test_criterion_08_rank_bound(desk2d):
    u = desk2d.prior.sample(8)
    counts = {}
    for n in (30, 50, 100):
        sk = build_sketch(ACHLIOPTAS, n, desk2d.N, seed=800 + n)
        lam = Objective(desk2d, sk).misfit_hessian_spectrum(u)
        counts[n] = int(np.sum(lam > 1e-10 * lam[0]))
    ok = all(c <= n for n, c in counts.items())
    record_acceptance(8, ok, "eigenvalues above 1e-10*lambda_1: "
                             + ", ".join(f"n={n}: {c}" for n, c in counts.items()))
    assert ok


@pytest.mark.slow
def test_criterion_09_pde_solve_reduction(desk2d):
    u_init = desk2d.prior.u0
    base = minimize(Objective(desk2d), u_init).pde_solves
    means = {}
    for dist in ALL_DISTRIBUTIONS:
        solves = [minimize(Objective(desk2d, build_sketch(dist, 50, desk2d.N, trial_seed(9, t))),
                           u_init).pde_solves for t in range(10)]
        means[dist.name] = float(np.mean(solves))
    vals = np.array(list(means.values()))
    reduced = bool(np.all(vals <= 0.8 * base))
    similar = vals.max() <= 1.15 * vals.min()
    ok = reduced and similar
    detail = ", ".join(f"{k} {v:.1f}" for k, v in means.items())
    record_acceptance(9, ok, f"deterministic {base}; RMA n=50 means {detail}")
    assert ok


def test_criterion_10_numerical_hygiene(desk2d, desk_oracle):
    rng = np.random.default_rng(10)
    obj = Objective(desk2d)
    u = 0.3 * desk2d.prior.sample(10)
    g = obj.gradient(u)
    grad_err = 0.0
    for _ in range(10):
        v = rng.standard_normal(u.size)
        h = 1e-5
        fd = (obj.cost(u + h * v) - obj.cost(u - h * v)) / (2 * h)
        grad_err = max(grad_err, abs(fd - g @ v) / abs(g @ v))

    fp = desk2d.forward
    w = fp.solve_forward(u)
    dot_err = 0.0
    for _ in range(10):
        du, dd = rng.standard_normal(u.size), rng.standard_normal(fp.num_observations)
        a = fp.jacobian_action(u, w, du) @ dd
        b = du @ fp.jacobian_transpose_action(u, w, dd)
        dot_err = max(dot_err, abs(a - b) / max(abs(a), abs(b)))

    fp1 = ForwardProblem(interval_mesh(1024), bi=0.1)
    x = fp1.mesh.nodes[:, 0]
    analytic_err = float(np.max(np.abs(fp1.solve_forward(np.zeros(x.size)) - (1 / 0.1 + 1 - x))))

    tight = SolverConfig(tol_cost=1e-14, tol_step=1e-14, tol_grad=1e-10)
    opt_err = 0.0
    for sk in (None, build_sketch(ACHLIOPTAS, 50, desk_oracle.N, seed=10)):
        ref = normal_equations_solve(desk_oracle, sk)
        got = minimize(QuadraticObjective(desk_oracle, sk), desk_oracle.u0, tight).u_final
        opt_err = max(opt_err, float(np.linalg.norm(got - ref) / np.linalg.norm(ref)))

    ok = grad_err <= 1e-4 and dot_err <= 1e-10 and analytic_err <= 1e-10 and opt_err <= 1e-6
    record_acceptance(10, ok, f"gradient FD {grad_err:.1e}, dot test {dot_err:.1e}, "
                              f"1D analytic {analytic_err:.1e}, optimizer vs oracle {opt_err:.1e}")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
