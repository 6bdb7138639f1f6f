import numpy as np
import pytest

from rmxpipe.core import CaseDefinition, InvalidInput
from rmxpipe.eigen import (
    diagonalize_block,
    diagonalize_blocks,
    residual,
    solve_case,
    surface_amplitudes,
)
from rmxpipe.synth import build_boundary_projector, build_hamiltonian, pole_draws


def test_one_by_one():
    es = diagonalize_block(np.array([[2.0]]))
    assert es.eigenvalues.tolist() == [2.0]
    assert es.eigenvectors.tolist() == [[1.0]]


def test_diagonal_input_gives_permutation():
    es = diagonalize_block(np.diag([3.0, 1.0, 2.0]))
    assert es.eigenvalues.tolist() == [1.0, 2.0, 3.0]
    expected = np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0]], dtype=float)
    np.testing.assert_array_equal(es.eigenvectors, expected)


def test_reconstruction_seed11():
    h = build_hamiltonian(CaseDefinition(1, 6, hamiltonian_seed=11))
    es = diagonalize_block(h)
    v = es.eigenvectors
    np.testing.assert_allclose(v @ np.diag(es.eigenvalues) @ v.T, h, rtol=0, atol=1e-9)
    assert residual(h, es) <= 1e-9
    assert es.orthogonality_error() <= 1e-10


def test_sign_convention():
    h = build_hamiltonian(CaseDefinition(1, 30, hamiltonian_seed=4))
    v = diagonalize_block(h).eigenvectors
    cols = np.arange(v.shape[1])
    assert np.all(v[np.argmax(np.abs(v), axis=0), cols] > 0)


def test_rejects_asymmetric():
    with pytest.raises(InvalidInput):
        diagonalize_block(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(InvalidInput):
        diagonalize_block(np.ones((2, 3)))


def test_spectrum_invariance():
    case = CaseDefinition(1, 64, (-2, 8), 0, 21)
    es = diagonalize_block(build_hamiltonian(case))
    np.testing.assert_allclose(es.eigenvalues, np.sort(pole_draws(case)), atol=1e-10)


def test_parallel_blocks_bit_identical():
    blocks = [build_hamiltonian(CaseDefinition(1, n, hamiltonian_seed=n)) for n in (5, 40, 80, 120)]
    seq = diagonalize_blocks(blocks, 1)
    par = diagonalize_blocks(blocks, 4)
    for a, b in zip(seq, par):
        assert a.eigenvalues.tobytes() == b.eigenvalues.tobytes()
        assert a.eigenvectors.tobytes() == b.eigenvectors.tobytes()


def test_surface_amplitudes_identity():
    from rmxpipe.core import EigenSystem

    es = EigenSystem([1.0, 2.0, 3.0], np.eye(3))
    w = surface_amplitudes(np.eye(3), es)
    np.testing.assert_array_equal(w.w, np.eye(3))


def test_single_channel_norm():
    case = CaseDefinition(1, 50, boundary_seed=3, hamiltonian_seed=4)
    es, w = solve_case(case)
    assert abs(np.sum(w.w[0] ** 2) - 1.0) <= 1e-10


def test_amplitudes_match_triple_loop():
    case = CaseDefinition(3, 10, boundary_seed=5, hamiltonian_seed=5)
    es = diagonalize_block(build_hamiltonian(case))
    b = build_boundary_projector(case).b
    w = surface_amplitudes(build_boundary_projector(case), es).w
    v = es.eigenvectors
    brute = np.zeros_like(w)
    for i in range(b.shape[0]):
        for k in range(v.shape[1]):
            s = 0.0
            for m in range(v.shape[0]):
                s += b[i, m] * v[m, k]
            brute[i, k] = s
    np.testing.assert_allclose(w, brute, rtol=0, atol=1e-12)


def test_completeness(desk_case):
    case, es, w = desk_case
    np.testing.assert_allclose(w.w @ w.w.T, np.eye(case.n_channels), atol=1e-9)
    assert abs(np.sum(w.w**2) - case.n_channels) <= 1e-9


def test_dimension_mismatch():
    from rmxpipe.core import EigenSystem

    with pytest.raises(InvalidInput):
        surface_amplitudes(np.ones((2, 4)), EigenSystem([1.0, 2.0, 3.0], np.eye(3)))
