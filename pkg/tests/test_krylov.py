"""Outer solvers: flexible GMRES mechanics and the stationary driver."""

from types import SimpleNamespace

import numpy as np
import pytest
import scipy.sparse as sp

import rscgc.krylov as kr
from rscgc.discretization import assemble_operator, point_source
from rscgc.krylov import fgmres, stationary_solve
from rscgc.multigrid import CyclePlan, build_hierarchy, cycle

from conftest import build_problem


def identity_hierarchy(n):
    """Stand-in with an identity fine operator, for driver-mechanics tests."""
    op = SimpleNamespace(matrix=sp.eye(n, format="csr", dtype=complex))
    return SimpleNamespace(levels=[SimpleNamespace(operator=op)])


def jacobi_preconditioned_run(**kwargs):
    problem = build_problem(2, 32, 12, pad=0)
    A = assemble_operator(problem, "fourth-order").matrix
    invd = 1.0 / A.diagonal()
    b = point_source(problem).ravel()
    return A, invd, fgmres(lambda v: A @ v, lambda v: 0.89 * invd * v, b, **kwargs)


# ---------------------------------------------------------------- fgmres

def test_identity_system_converges_in_one_step():
    rng = np.random.default_rng(0)
    b = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    x, report = fgmres(lambda v: v, None, b, tol=1e-12)
    assert report.converged and report.iterations == 1
    assert np.allclose(x, b)


def test_matches_dense_solve():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((10, 10)) + 1j * rng.standard_normal((10, 10))
    A += 20.0 * np.eye(10)
    b = rng.standard_normal(10) + 1j * rng.standard_normal(10)
    x, report = fgmres(lambda v: A @ v, None, b, tol=1e-12)
    assert report.converged
    assert np.linalg.norm(x - np.linalg.solve(A, b)) <= 1e-8


def test_flexible_storage_agrees_with_composed_operator():
    """With a fixed M, right preconditioning equals plain GMRES on A M."""
    A, invd, (x1, rep1) = jacobi_preconditioned_run(tol=1e-12, maxit=25)
    problem = build_problem(2, 32, 12, pad=0)
    b = point_source(problem).ravel()
    precondition = lambda v: 0.89 * invd * v
    y, rep2 = fgmres(lambda v: A @ precondition(v), None, b, tol=1e-12, maxit=25)
    x2 = precondition(y)
    h1, h2 = np.array(rep1.residual_history), np.array(rep2.residual_history)
    assert h1.shape == h2.shape
    assert np.allclose(h1, h2, rtol=1e-10, atol=1e-14)
    assert np.allclose(x1, x2, atol=1e-10 * np.linalg.norm(x1))


def test_restart_keeps_counting_across_blocks():
    _, _, (x, report) = jacobi_preconditioned_run(tol=1e-8, restart=5, maxit=23)
    assert report.iterations == 23 and not report.converged
    assert len(report.residual_history) == report.iterations + 1


def test_history_monotone_and_final_entry_recomputed():
    problem = build_problem(2, 32, 12, pad=0)
    A = assemble_operator(problem, "fourth-order")
    hier = build_hierarchy(problem, "fourth-order", CyclePlan(alpha=1.0045))
    b = point_source(problem).ravel()
    x, report = fgmres(lambda v: A.matrix @ v, lambda v: cycle(hier, v), b, tol=1e-8)
    h = np.array(report.residual_history)
    assert report.converged
    assert h[0] == pytest.approx(1.0)
    assert np.all(np.diff(h) <= 1e-12)
    recomputed = np.linalg.norm(b - A.matrix @ x) / np.linalg.norm(b)
    assert abs(h[-1] - recomputed) <= 1e-12


def test_zero_rhs_short_circuits():
    x, report = fgmres(lambda v: v, None, np.zeros(8), tol=1e-8)
    assert report.converged and report.iterations == 0
    assert not x.any() and report.residual_history == [0.0]


def test_warm_start_at_the_solution():
    rng = np.random.default_rng(2)
    A = np.diag(rng.uniform(1, 2, 12)).astype(complex)
    b = rng.standard_normal(12).astype(complex)
    exact = np.linalg.solve(A, b)
    x, report = fgmres(lambda v: A @ v, None, b, x0=exact, tol=1e-8)
    assert report.converged and report.iterations == 0
    assert np.array_equal(x, exact)


def test_lucky_breakdown_on_a_two_cluster_spectrum():
    """diag(1,...,2,...) has a 2-dimensional Krylov space: two iterations."""
    d = np.array([1.0] * 5 + [2.0] * 5)
    b = np.ones(10, dtype=complex)
    x, report = fgmres(lambda v: d * v, None, b, tol=1e-10)
    assert report.converged and report.iterations == 2
    assert np.allclose(x, b / d, atol=1e-12)


def test_fgmres_argument_validation():
    b = np.ones(4)
    with pytest.raises(ValueError, match="tol"):
        fgmres(lambda v: v, None, b, tol=0.0)
    with pytest.raises(ValueError, match="restart"):
        fgmres(lambda v: v, None, b, restart=0)


def test_maxit_caps_the_iteration_count():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((30, 30)) + 30.0 * np.eye(30)
    b = rng.standard_normal(30)
    _, report = fgmres(lambda v: A @ v, None, b, tol=1e-30, maxit=7)
    assert report.iterations == 7 and not report.converged


# ---------------------------------------------------------------- stationary

def test_stationary_flags_divergence_at_tenfold_growth(monkeypatch):
    monkeypatch.setattr(kr, "cycle", lambda h, r: -r)
    rng = np.random.default_rng(4)
    b = rng.standard_normal(16).astype(complex)
    x, report = stationary_solve(identity_hierarchy(16), b, tol=1e-8)
    # residual doubles each step: 2, 4, 8, 16 => flagged on the fourth
    assert report.diverged and not report.converged
    assert report.iterations == 4


def test_stationary_converges_with_a_contracting_cycle(monkeypatch):
    monkeypatch.setattr(kr, "cycle", lambda h, r: 0.5 * r)
    b = np.ones(9, dtype=complex)
    x, report = stationary_solve(identity_hierarchy(9), b, tol=1e-3)
    assert report.converged and not report.diverged
    assert report.iterations == 10  # 2^-10 is the first residual under 1e-3
    h = np.array(report.residual_history)
    assert np.allclose(h, 0.5 ** np.arange(11))


def test_stationary_warm_start_and_maxit(monkeypatch):
    calls = []
    monkeypatch.setattr(kr, "cycle", lambda h, r: calls.append(1) or 0.5 * r)
    b = np.ones(9, dtype=complex)
    x, report = stationary_solve(identity_hierarchy(9), b, x0=b, tol=1e-8)
    assert report.converged and report.iterations == 0 and not calls

    _, capped = stationary_solve(identity_hierarchy(9), b, tol=1e-30, maxit=6)
    assert capped.iterations == 6
    assert not capped.converged and not capped.diverged


def test_stationary_on_a_real_hierarchy():
    # needs the absorbing layer: the undamped closed box is near-resonant
    problem = build_problem(2, 32, 10)
    hier = build_hierarchy(problem, "fourth-order", CyclePlan(alpha=1.014))
    b = point_source(problem).ravel()
    x, report = stationary_solve(hier, b, tol=1e-8)
    assert report.converged and not report.diverged
    A = hier.levels[0].operator.matrix
    assert np.linalg.norm(b - A @ x) <= 1e-8 * np.linalg.norm(b)
    with pytest.raises(ValueError, match="tol"):
        stationary_solve(hier, b, tol=-1.0)
