from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqdiag.davidson import davidson_lowest
from sqdiag.oracle import dense_diagonalize
from sqdiag.subspace import SolverConfig


def _random_symmetric(rng, n, diag_scale=10.0):
    a = rng.normal(size=(n, n))
    # diagonally dominant spread mimics CI matrices and exercises the preconditioner
    return 0.5 * (a + a.T) + np.diag(np.sort(rng.normal(scale=diag_scale, size=n)))


def test_dimension_one():
    res = davidson_lowest(lambda v: 3.5 * v, 1, SolverConfig())
    assert res.eigenvalue == 3.5
    assert res.n_iterations == 0
    assert res.converged


def test_dimension_zero_rejected():
    with pytest.raises(ValueError):
        davidson_lowest(lambda v: v, 0, SolverConfig())


def test_random_200_matches_dense():
    rng = np.random.default_rng(0)
    a = _random_symmetric(rng, 200)
    res = davidson_lowest(lambda v: a @ v, 200, SolverConfig(davidson_tol=1e-10), diagonal=np.diag(a))
    assert res.converged
    assert abs(res.eigenvalue - dense_diagonalize(a)[0][0]) < 1e-10
    assert np.linalg.norm(a @ res.vector - res.eigenvalue * res.vector) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 300), scale=st.sampled_from([0.0, 1.0, 20.0]),
       use_diag=st.booleans())
def test_matches_dense_property(seed, n, scale, use_diag):
    rng = np.random.default_rng(seed)
    a = _random_symmetric(rng, n, scale)
    res = davidson_lowest(lambda v: a @ v, n, SolverConfig(davidson_tol=1e-10, max_davidson_iter=2000),
                          diagonal=np.diag(a) if use_diag else None)
    assert res.converged
    assert abs(res.eigenvalue - np.linalg.eigvalsh(a)[0]) < 1e-10


def test_restart_path_small_subspace():
    rng = np.random.default_rng(3)
    a = _random_symmetric(rng, 150, 1.0)
    cfg = SolverConfig(davidson_tol=1e-10, max_subspace_vectors=4, max_davidson_iter=5000)
    res = davidson_lowest(lambda v: a @ v, 150, cfg, diagonal=np.diag(a))
    assert res.converged
    assert abs(res.eigenvalue - np.linalg.eigvalsh(a)[0]) < 1e-10


def test_non_convergence_is_flagged():
    rng = np.random.default_rng(4)
    a = _random_symmetric(rng, 100, 0.1)
    res = davidson_lowest(lambda v: a @ v, 100, SolverConfig(davidson_tol=1e-12, max_davidson_iter=3))
    assert not res.converged
    assert res.n_iterations == 3
    assert res.residual_norm > 1e-12


def test_warm_start_converges_immediately():
    rng = np.random.default_rng(5)
    a = _random_symmetric(rng, 80)
    w, u = np.linalg.eigh(a)
    res = davidson_lowest(lambda v: a @ v, 80, SolverConfig(davidson_tol=1e-9), initial_guess=u[:, 0])
    assert res.n_iterations == 0
    assert abs(res.eigenvalue - w[0]) < 1e-12


def test_bad_guess_rejected():
    with pytest.raises(ValueError):
        davidson_lowest(lambda v: v, 3, SolverConfig(), initial_guess=np.zeros(3))
    with pytest.raises(ValueError):
        davidson_lowest(lambda v: v, 3, SolverConfig(), diagonal=np.ones(2))


def test_degeneracy_flag():
    # Krylov-type search spaces see one direction per eigenspace, so the flag
    # is only reliable once the subspace exhausts the space, as it does here
    rng = np.random.default_rng(7)
    block = _random_symmetric(rng, 3, 3.0)
    b = np.kron(np.eye(2), block)
    cfg = SolverConfig(davidson_tol=1e-300, max_davidson_iter=50)
    # a perturbed preconditioner breaks the block symmetry of the updates
    precond = np.diag(b) + rng.normal(scale=0.1, size=6)
    res = davidson_lowest(lambda v: b @ v, 6, cfg, initial_guess=rng.normal(size=6), diagonal=precond)
    assert res.converged
    assert res.degenerate
    assert res.eigenvalue == pytest.approx(np.linalg.eigvalsh(block)[0], abs=1e-12)


def test_no_degeneracy_flag_for_gapped_operator():
    rng = np.random.default_rng(8)
    a = _random_symmetric(rng, 40)
    assert not davidson_lowest(lambda v: a @ v, 40, SolverConfig(davidson_tol=1e-10), diagonal=np.diag(a)).degenerate


def test_deterministic():
    rng = np.random.default_rng(6)
    a = _random_symmetric(rng, 120)
    runs = [davidson_lowest(lambda v: a @ v, 120, SolverConfig(davidson_tol=1e-10), diagonal=np.diag(a)) for _ in range(2)]
    assert runs[0].eigenvalue == runs[1].eigenvalue
    np.testing.assert_array_equal(runs[0].vector, runs[1].vector)
