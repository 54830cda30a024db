import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from callias_lab.calculus import SWITCH_KINDS, SwitchFunction, potential_unitary
from callias_lab.experiments import (ExperimentConfig, _vortex_model, _vortex_window, block_path,
                                     harper_fermi_level, harper_hamiltonian, vortex_even_indices, vortex_loop,
                                     vortex_values)
from callias_lab.flow import spectral_flow, straight_line_flow
from callias_lab.operators import (SIGMA_X, SIGMA_Z, HermitianOperator, PositionDerivation, TraceWeights,
                                   build_lattice, commutator_norm, dirac_operator, to_dense,
                                   zero_momentum_weights)
from callias_lab.pairings import (SupportLeakError, boundary_invariant, cell_weights, chern_number,
                                  chiral_projection, edge_sites, even_pairing, fermi_projection, nc_winding,
                                  odd_index_pairing, polar_phase, skew_corner_index)

# lowest Harper band at flux 2 pi / 3, Fukui-Hatsugai lattice Berry curvature on a 24 x 24 k-grid
HARPER_LOWEST_BAND_CHERN = -1


@pytest.fixture(scope="module")
def line():
    m = build_lattice(1, [401], 1)
    D, _ = dirac_operator(m)
    return m, D, m.site_coordinates()[:, 0]


def line_unitary(m, values, kind="erf_based", g=1.0):
    H = HermitianOperator(sp.diags(np.asarray(values, dtype=complex), format="csr"))
    return to_dense(potential_unitary(H, SwitchFunction(kind, g), model=m).matrix)


def safe_kappa(D, U):
    return 0.5 / commutator_norm(D, U)


def test_odd_pairing_trivial_unitary(line):
    m, D, _ = line
    U = np.eye(m.hilbert_dim)
    assert odd_index_pairing(D, U, 0.4, window_radius=120, model=m).index == 0


def test_odd_pairing_single_crossing_matches_flow(line):
    m, D, x = line
    vals = np.tanh(x / 30)
    flow = spectral_flow(block_path(vals.reshape(-1, 1, 1))).flow
    U = line_unitary(m, vals)
    res = odd_index_pairing(D, U, safe_kappa(D, U), window_radius=120, model=m)
    assert flow == 1 and res.index == flow
    assert res.commutator_bound < 1 and res.support_leak == 0


def test_odd_pairing_additive_on_disjoint_factors(line):
    m, D, x = line
    Ua, Ub = line_unitary(m, np.tanh((x + 80) / 30)), line_unitary(m, np.tanh((x - 80) / 30))
    n = m.hilbert_dim
    assert np.abs((Ua - np.eye(n)) @ (Ub - np.eye(n))).max() == 0
    idx = [odd_index_pairing(D, V, safe_kappa(D, V), window_radius=190, model=m).index for V in (Ua, Ub, Ua @ Ub)]
    assert idx == [1, 1, 2]


def test_odd_pairing_errors(line):
    m, D, x = line
    U = line_unitary(m, np.tanh(x / 30))
    with pytest.raises(SupportLeakError):
        odd_index_pairing(D, U, safe_kappa(D, U), window_radius=10, model=m)
    with pytest.raises(ValueError):
        odd_index_pairing(D, U, 4 / commutator_norm(D, U), window_radius=120, model=m)
    with pytest.raises(ValueError):
        odd_index_pairing(D, U, 0.0, window_radius=120, model=m)
    with pytest.raises(ValueError):
        odd_index_pairing(D, 2 * U, 0.1, window_radius=120, model=m)


def test_nc_winding_examples(line):
    m, D, x = line
    w = zero_momentum_weights(m)
    edge = edge_sites(m)
    assert nc_winding(np.eye(m.hilbert_dim), D, w, edge_mask=edge).value == 0
    U = line_unitary(m, np.tanh(x / 30))
    wt = nc_winding(U, D, w, edge_mask=edge)
    pair = odd_index_pairing(D, U, safe_kappa(D, U), window_radius=120, model=m)
    assert wt.value == pair.index == 1
    assert abs(wt.normalized - 1) < 0.05 and abs(wt.raw.imag) < 1e-10


def test_nc_winding_padding_is_neutral(line):
    m, D, x = line
    U = line_unitary(m, np.tanh(x / 30))
    raw = nc_winding(U, D, zero_momentum_weights(m)).raw
    n = m.hilbert_dim
    Up = np.block([[U, np.zeros((n, n))], [np.zeros((n, n)), np.eye(n)]])
    Dp = sp.block_diag([D.matrix, D.matrix], format="csr")
    wp = TraceWeights(np.ones(2), basis=np.kron(np.eye(2), np.ones((n, 1))))
    assert abs(nc_winding(Up, HermitianOperator(Dp), wp).raw - raw) < 1e-12


def test_nc_winding_edge_failure(line):
    m, D, x = line
    U = line_unitary(m, np.tanh((x - 195) / 30))
    with pytest.raises(SupportLeakError):
        nc_winding(U, D, zero_momentum_weights(m), edge_mask=edge_sites(m))


@pytest.mark.parametrize("kind", SWITCH_KINDS)
def test_odd_engines_switch_independent(line, kind):
    m, D, x = line
    U = line_unitary(m, np.tanh(x / 30), kind)
    assert odd_index_pairing(D, U, safe_kappa(D, U), window_radius=120, model=m).index == 1
    assert nc_winding(U, D, zero_momentum_weights(m), edge_mask=edge_sites(m)).value == 1


# ---------------------------------------------------------------------------
# Chern number

def harper_bloch(H, model, k1, k2, q=3):
    """Bloch matrix of the torus Hamiltonian on a q x 1 magnetic cell, read off the real-space matrix."""
    L1, L2 = model.extent
    idx = model.site_indices()
    Hk = np.zeros((q, q), dtype=complex)
    for j in range(q):
        s = j * L2
        for t in np.flatnonzero(H[s]):
            a, b = idx[t]
            da = (a - j + L1 // 2) % L1 - L1 // 2
            db = (b + L2 // 2) % L2 - L2 // 2
            jp = a % q
            Hk[j, jp] += H[s, t] * np.exp(1j * (k1 * (da + j - jp) + k2 * db))
    return Hk


def fukui_hatsugai(bloch, q=3, n=24, bands=1):
    k1s = 2 * np.pi * np.arange(n) / (n * q)
    k2s = 2 * np.pi * np.arange(n) / n
    u = np.empty((n, n, q, bands), dtype=complex)
    for i, k1 in enumerate(k1s):
        for j, k2 in enumerate(k2s):
            u[i, j] = np.linalg.eigh(bloch(k1, k2))[1][:, :bands]

    def link(a, b):
        d = np.linalg.det(a.conj().T @ b)
        return d / abs(d)

    total = 0.0
    for i in range(n):
        for j in range(n):
            i1, j1 = (i + 1) % n, (j + 1) % n
            total += np.angle(link(u[i, j], u[i1, j]) * link(u[i1, j], u[i1, j1])
                              * link(u[i1, j1], u[i, j1]) * link(u[i, j1], u[i, j]))
    return total / (2 * np.pi)


@pytest.fixture(scope="module")
def harper():
    theta = 2 * np.pi / 3
    m = build_lattice(2, (30, 30), 1, "periodic", 1.0)
    H = harper_hamiltonian(m, theta)
    fermi, _ = harper_fermi_level(theta, 30)
    return m, H, fermi_projection(H, fermi)


def test_fukui_hatsugai_oracle(harper):
    m, H, _ = harper
    c = fukui_hatsugai(lambda k1, k2: harper_bloch(H, m, k1, k2))
    assert abs(c - HARPER_LOWEST_BAND_CHERN) < 1e-9
    # gap labelling 1 = 3 s + t with |t| <= 3/2 forces |t| = 1
    assert abs(HARPER_LOWEST_BAND_CHERN) == 1


def test_chern_harper_lowest_band(harper):
    m, _, P = harper
    ch = chern_number(P, PositionDerivation(m, 0), PositionDerivation(m, 1), cell_weights(m))
    assert ch.nearest == HARPER_LOWEST_BAND_CHERN
    assert ch.distance < 1e-3
    assert ch.calibration == 2j * np.pi


def test_chern_constant_projection_is_zero():
    m = build_lattice(2, (6, 6), 2, "periodic")
    P = np.kron(np.eye(36), np.diag([1.0, 0.0]))
    ch = chern_number(P, PositionDerivation(m, 0), PositionDerivation(m, 1), cell_weights(m))
    assert ch.value == 0 and ch.nearest == 0


def test_chern_block_sum_is_additive(harper):
    m, H, P = harper
    X1, X2 = PositionDerivation(m, 0), PositionDerivation(m, 1)
    c1 = chern_number(P, X1, X2, cell_weights(m)).value
    # the conjugate Hamiltonian has the opposite flux, so its band carries the opposite Chern number
    Q = P.conj()
    c2 = chern_number(Q, X1, X2, cell_weights(m)).value
    m2 = build_lattice(2, (30, 30), 2, "periodic", 1.0)
    PQ = np.zeros((1800, 1800), dtype=complex)
    PQ[0::2, 0::2], PQ[1::2, 1::2] = P, Q
    both = chern_number(PQ, PositionDerivation(m2, 0), PositionDerivation(m2, 1), cell_weights(m2))
    assert abs(both.value - (c1 + c2)) < 1e-9
    assert round(c1) == -round(c2)


def test_chern_rejects_non_idempotent():
    m = build_lattice(2, (3, 3), 1, "periodic")
    with pytest.raises(ValueError):
        chern_number(0.5 * np.eye(9), PositionDerivation(m, 0), PositionDerivation(m, 1), cell_weights(m))


def test_fermi_level_in_spectrum_raises():
    with pytest.raises(ValueError):
        fermi_projection(np.diag([0.0, 1.0]), 1.0)


def test_cell_weights_collar():
    m = build_lattice(2, (10, 10), 1, "open")
    w = cell_weights(m).weights
    assert (w > 0).sum() == 4 and abs(w.sum() - 1) < 1e-15
    with pytest.raises(ValueError):
        cell_weights(build_lattice(2, (8, 8), 1, "open"))


# ---------------------------------------------------------------------------
# boundary invariants

def test_boundary_endpoints_examples():
    assert boundary_invariant("endpoints_1d", (-np.eye(1), np.eye(1))) == 1
    assert boundary_invariant("endpoints_1d", (np.eye(1), -np.eye(1))) == -1
    assert boundary_invariant("endpoints_1d", (np.diag([1.0, -1.0]), np.diag([-1.0, 1.0]))) == 0
    with pytest.raises(ValueError):
        boundary_invariant("endpoints_1d", (np.zeros((1, 1)), np.eye(1)))


def test_boundary_endpoints_matches_interpolating_flow():
    rng = np.random.default_rng(4)
    for _ in range(10):
        ends = []
        for _ in range(2):
            V = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))[0]
            ends.append((V * rng.choice([-1.0, 1.0], size=4) * rng.uniform(0.5, 2, size=4)) @ V.conj().T)
        assert boundary_invariant("endpoints_1d", ends) == straight_line_flow(*ends)


@pytest.mark.parametrize("w", [-2, -1, 0, 1, 3])
def test_boundary_loop_winding(w):
    assert boundary_invariant("loop_2d", vortex_loop(lambda z: vortex_values(z, w))) == w


def test_boundary_loop_constant_and_errors():
    assert boundary_invariant("loop_2d", [SIGMA_X] * 12) == 0
    with pytest.raises(ValueError):
        boundary_invariant("loop_2d", [SIGMA_X, SIGMA_X])
    with pytest.raises(ValueError):
        boundary_invariant("loop_2d", [SIGMA_Z] * 4)
    with pytest.raises(ValueError):
        boundary_invariant("loop_2d", [np.zeros((2, 2))] * 4)
    with pytest.raises(ValueError):
        boundary_invariant("loop_2d", vortex_loop(lambda z: vortex_values(z, 8), samples=12))
    with pytest.raises(ValueError):
        boundary_invariant("sphere", [])


# ---------------------------------------------------------------------------
# chiral projection, skew corner, even pairing

def test_chiral_projection_pauli_example():
    for g in (1.0, 2.0):
        out = chiral_projection(SIGMA_X, SIGMA_Z, SwitchFunction("erf_based", g))
        assert np.allclose(out.S, -SIGMA_Z) and np.allclose(out.P, np.diag([1, 0]))
        assert out.formula_gap < 1e-10


def test_chiral_projection_invariants():
    rng = np.random.default_rng(8)
    T = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    H = np.block([[np.zeros((4, 4)), T.conj().T], [T, np.zeros((4, 4))]])
    J = np.diag([1.0] * 4 + [-1.0] * 4)
    for kind in SWITCH_KINDS:
        out = chiral_projection(H, J, SwitchFunction(kind, 1.5))
        assert np.abs(out.S @ out.S - np.eye(8)).max() < 1e-10
        assert np.abs(out.P @ out.P - out.P).max() < 1e-10


def test_chiral_projection_rejects_symmetric_input():
    with pytest.raises(ValueError):
        chiral_projection(SIGMA_Z, SIGMA_Z, SwitchFunction("erf_based", 1.0))


def proj(*vectors):
    B = np.linalg.qr(np.array(vectors, dtype=complex).T)[0]
    return B @ B.conj().T


def test_skew_corner_examples():
    e = np.eye(4)
    P, Q = proj(e[0]), proj(e[0], e[1], e[2])
    assert skew_corner_index(np.zeros((4, 4)), P, Q) == 3 - 1
    rng = np.random.default_rng(0)
    W = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))[0]
    assert skew_corner_index(W, np.eye(4), np.eye(4)) == 0
    E = np.eye(3)
    T = np.outer(E[0], E[0])
    assert skew_corner_index(T, proj(E[0]), proj(E[0], E[1])) == 1
    with pytest.raises(ValueError):
        skew_corner_index(np.ones((3, 3)), proj(E[0]), proj(E[0], E[1]))
    with pytest.raises(ValueError):
        skew_corner_index(T, 0.5 * np.eye(3), np.eye(3))


def test_even_pairing_scalar_projection_is_zero():
    rng = np.random.default_rng(3)
    W = np.linalg.qr(rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5)))[0]
    P = np.kron(np.eye(5), np.diag([1.0, 0.0]))
    assert even_pairing(P, P, np.kron(W, np.eye(2))).index == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10**6))
def test_even_pairing_skew_corner_cross_check(n, seed):
    rng = np.random.default_rng(seed)
    W = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))[0]
    Pp = proj(*rng.normal(size=(int(rng.integers(1, n)), n)))
    Pm = proj(*rng.normal(size=(int(rng.integers(1, n)), n)))
    # the mode raises if the straight-line flow and the skew-corner index disagree
    res = even_pairing(Pp, Pm, W)
    assert res.index == round(np.trace(Pm).real) - round(np.trace(Pp).real)


def test_even_pairing_rejects_non_unitary_and_bad_mode():
    P = np.diag([1.0, 0.0])
    with pytest.raises(ValueError):
        even_pairing(P, P, 2 * np.eye(2))
    with pytest.raises(ValueError):
        even_pairing(P, P, np.eye(2), mode="odd")
    with pytest.raises(ValueError):
        even_pairing(mode="localizer", S_plus=np.eye(2), D0=np.eye(1), kappa=0.0)


def test_polar_phase():
    rng = np.random.default_rng(6)
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    F = polar_phase(A)
    assert np.abs(F.conj().T @ F - np.eye(4)).max() < 1e-12
    w, V = np.linalg.eigh(A.conj().T @ A)
    assert np.allclose(F @ ((V * np.sqrt(w)) @ V.conj().T), A)
    with pytest.raises(ValueError):
        polar_phase(np.diag([1.0, 0.0]))


@pytest.fixture(scope="module")
def small_vortex():
    cfg = ExperimentConfig("even_vortex", lattice={"extent": 25, "spacing": 0.3}, window_radius=3.5)
    spinor, scalar, z = _vortex_model(cfg)
    W, _ = _vortex_window(cfg, scalar)
    return cfg, spinor, scalar, z, W


@pytest.mark.parametrize("w", [-1, 0, 1])
def test_even_pairing_vortex_matches_loop(small_vortex, w):
    cfg, spinor, scalar, z, W = small_vortex
    p = vortex_even_indices(vortex_values(z, w), cfg, spinor, scalar, z, W, with_kernel=False)["pairing"]
    assert p == boundary_invariant("loop_2d", vortex_loop(lambda q: vortex_values(q, w))) == w
