import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from callias_lab.calculus import (SWITCH_KINDS, SmoothFunction, SwitchFunction, apply_function, bounded_transform,
                                  check_asymptotic_invertibility, commutator_transfer_bound, locality_profile,
                                  potential_unitary, switch_function)
from callias_lab.operators import SIGMA_Z, GeneralOperator, HermitianOperator, build_lattice

from support import decays_monotonically, herm, rs_locality

# closed form of the transform of the sine ramp derivative, integrated with scipy quad
SINE_RAMP_FOURIER_L1_G2 = 1.851937051982453


def test_apply_function_examples():
    rng = np.random.default_rng(0)
    H = herm(rng, 6)
    assert np.abs(apply_function(H, lambda w: w).dense() - H).max() < 1e-12
    assert np.abs(apply_function(H, np.ones_like).dense() - np.eye(6)).max() < 1e-12
    P = apply_function(SIGMA_Z, lambda w: (w > 0).astype(float))
    assert np.allclose(P.dense(), np.diag([1, 0]))
    assert isinstance(P, HermitianOperator)


def test_apply_function_complex_output_is_general():
    out = apply_function(np.diag([1.0, 2.0]), lambda w: np.exp(1j * w))
    assert not isinstance(out, HermitianOperator)
    assert np.allclose(out.dense(), np.diag(np.exp([1j, 2j])))


def test_apply_function_sitewise_path_matches_dense():
    m = build_lattice(1, [7], 2)
    rng = np.random.default_rng(3)
    blocks = [herm(rng, 2) for _ in range(7)]
    H = sp.block_diag(blocks, format="csr")
    f = lambda w: np.tanh(w) ** 3
    fast = apply_function(H, f, model=m)
    assert fast.is_sparse
    assert np.abs(fast.dense() - apply_function(H.toarray(), f).dense()).max() < 1e-12


def test_switch_values():
    for kind in SWITCH_KINDS:
        G = switch_function(kind, 0.8)
        assert G(0.8) == 1
        assert G(0.0) == 0
        assert G(-3 * 0.8) == -1
        grid = np.linspace(-1, 1, 2001)
        vals = G(grid)
        assert np.all(np.diff(vals) >= -1e-15)
        assert np.allclose(G(-grid), -vals, atol=1e-15)
        assert np.all(vals[np.abs(grid) >= 0.4] == np.sign(grid[np.abs(grid) >= 0.4]))


def test_switch_rejects_bad_parameters():
    with pytest.raises(ValueError):
        SwitchFunction("tanh", 1.0)
    with pytest.raises(ValueError):
        SwitchFunction("erf_based", 0.0)


def test_switch_derivative_matches_difference_quotient():
    for kind in SWITCH_KINDS:
        G = SwitchFunction(kind, 1.3)
        x = np.linspace(-0.6, 0.6, 37)
        h = 1e-6
        assert np.allclose(G.derivative(x), (G(x + h) - G(x - h)) / (2 * h), atol=1e-5)


def test_fourier_norm_against_closed_form():
    got = SwitchFunction("sine_ramp", 2.0).fourier_l1()
    assert abs(got - SINE_RAMP_FOURIER_L1_G2) < 1e-4 * SINE_RAMP_FOURIER_L1_G2
    # scaling: F of G_g' has norm proportional to 1/g
    assert abs(SwitchFunction("sine_ramp", 1.0).fourier_l1() - 2 * got) < 1e-12


def test_fourier_norm_dominates_sup_of_derivative():
    # Fourier inversion gives |f'(x)| <= ||F f'||_1
    for kind in SWITCH_KINDS:
        G = SwitchFunction(kind, 2.0)
        assert G.fourier_l1() >= np.abs(G.derivative(np.linspace(-1, 1, 401))).max()


def test_potential_unitary_examples():
    G = SwitchFunction("erf_based", 2.0)
    assert np.allclose(potential_unitary(np.diag([2.0, -2.0]), G).dense(), np.eye(2))
    assert np.allclose(potential_unitary(np.zeros((1, 1)), SwitchFunction("sine_ramp", 0.3)).dense(), [[-1]])
    assert np.allclose(potential_unitary(np.diag([0.0, 2.0]), G).dense(), np.diag([-1, 1]))


def test_potential_unitary_is_unitary_and_trivial_outside_window():
    rng = np.random.default_rng(5)
    H = herm(rng, 10)
    for kind in SWITCH_KINDS:
        G = SwitchFunction(kind, 1.5)
        U = potential_unitary(H, G).dense()
        assert np.abs(U.conj().T @ U - np.eye(10)).max() < 1e-10
        w, V = np.linalg.eigh(H)
        far = V[:, np.abs(w) >= 0.75]
        assert np.abs((U - np.eye(10)) @ far).max() < 1e-12


def test_bounded_transform_examples():
    assert np.allclose(bounded_transform(np.zeros((2, 2))).dense(), 0)
    assert abs(bounded_transform(np.ones((1, 1))).dense()[0, 0] - 1 / np.sqrt(2)) < 1e-15
    out = bounded_transform(HermitianOperator(np.diag([3.0, -4.0]))).dense()
    assert np.allclose(out, np.diag([3 / np.sqrt(10), -4 / np.sqrt(17)]), atol=1e-15)
    sparse = bounded_transform(HermitianOperator(sp.diags([3.0, -4.0], format="csr")))
    assert np.allclose(sparse.dense(), out)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 10**6))
def test_bounded_transform_commutes_with_adjoint(r, c, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(r, c)) + 1j * rng.normal(size=(r, c))
    lhs = bounded_transform(GeneralOperator(A)).dense().conj().T
    rhs = bounded_transform(GeneralOperator(A.conj().T)).dense()
    assert np.abs(lhs - rhs).max() < 1e-12
    assert np.linalg.norm(bounded_transform(GeneralOperator(A)).dense(), 2) < 1


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10**6))
def test_apply_function_is_multiplicative(n, seed):
    H = herm(np.random.default_rng(seed), n)
    f, g = np.sin, lambda w: np.exp(0.3j * w)
    prod = apply_function(H, lambda w: f(w) * g(w)).dense()
    sep = apply_function(H, f).dense() @ apply_function(H, g).dense()
    assert np.abs(prod - sep).max() < 1e-10


def test_invertibility_certificate_examples():
    m = build_lattice(1, [9])
    assert check_asymptotic_invertibility(np.eye(9), m).g_est == 1
    inside = np.zeros(9, dtype=bool)
    inside[3:6] = True
    H = np.diag(np.where(inside, 0.0, 2.0))
    cert = check_asymptotic_invertibility(H, m, inside, collar=0)
    assert cert.g_est == 2 and cert.passed
    with pytest.raises(ValueError):
        check_asymptotic_invertibility(H, m, np.ones(9, dtype=bool))


def test_invertibility_certificate_collar():
    m = build_lattice(1, [11])
    h = np.abs(np.arange(11) - 5.0)
    mask = np.zeros(11, dtype=bool)
    mask[5] = True
    assert check_asymptotic_invertibility(np.diag(h), m, mask, collar=2).g_est == 3


def test_locality_profile_examples():
    m = build_lattice(1, [9])
    mask = np.zeros(9, dtype=bool)
    mask[4] = True
    prof = locality_profile(np.zeros((9, 9)), m, mask)
    assert set(prof) == set(range(5)) and all(v == 0 for v in prof.values())
    assert set(locality_profile(np.eye(9), m, np.ones(9, dtype=bool))) == {0}


def test_locality_profile_decays_on_path_model():
    assert decays_monotonically(rs_locality(1), 25, 1e-8)
    assert decays_monotonically(rs_locality(2, hopping=0.01), 25, 1e-8)


def test_transfer_bound_examples():
    D = np.diag([1.0, 2.0, 3.0])
    lhs, rhs = commutator_transfer_bound(D, np.diag([0.1, -0.2, 0.3]), SwitchFunction("erf_based", 1.0))
    assert lhs == 0 and rhs == 0
    rng = np.random.default_rng(2)
    Dr, Hr = herm(rng, 5), herm(rng, 5)
    # f(H) = H, so with unit Fourier norm both sides coincide
    lhs, rhs = commutator_transfer_bound(Dr, Hr, SmoothFunction(lambda w: w, 1.0))
    assert abs(lhs - np.linalg.norm(Dr @ Hr - Hr @ Dr, 2)) < 1e-10 and rhs >= lhs - 1e-12


def test_transfer_bound_rejects_divergent_norm():
    with pytest.raises(ArithmeticError):
        commutator_transfer_bound(np.eye(2), np.eye(2), SmoothFunction(np.sign, np.inf))


@pytest.mark.parametrize("kind", SWITCH_KINDS)
def test_transfer_bound_random_pairs(kind):
    rng = np.random.default_rng(11)
    G = SwitchFunction(kind, 1.0)
    for _ in range(50):
        D, H = herm(rng, 8), herm(rng, 8)
        lhs, rhs = commutator_transfer_bound(D, H, G)
        assert lhs <= rhs + 1e-8
