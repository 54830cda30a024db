"""Callias operators, spectral localizers, finite windows and index engines."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import (InvertibilityCertificate, SwitchFunction, eigh, potential_unitary,
                       unitary_phase_function)
from .operators import (GeneralOperator, HermitianOperator, LatticeModel, as_matrix,
                        lattice_laplacian, to_dense)

STRUCTURE_TOL = 1e-10
LDL_THRESHOLD = 400

# Kernel counting and the localizer engines measure the index with opposite
# orientations once D = -i d/dx is fixed; this constant pins every engine to
# "single upward crossing = +1".
KERNEL_ORIENTATION = -1
EVEN_LOCALIZER_ORIENTATION = -1


class WindowError(RuntimeError):
    """Raised when a compressed localizer is not gapped."""


# ---------------------------------------------------------------------------
# setups

@dataclass
class CalliasSetup:
    """Data of an odd (``H``) or even (``T``, ``gamma``, ``J``) Callias problem."""

    D: HermitianOperator
    kappa: float
    cert: InvertibilityCertificate
    H: HermitianOperator | None = None
    T: GeneralOperator | None = None
    gamma: HermitianOperator | None = None
    J: HermitianOperator | None = None
    mu: float = 0.0
    switch: SwitchFunction | None = None
    model: LatticeModel | None = None

    def __post_init__(self):
        if not self.cert.passed:
            raise ValueError("asymptotic invertibility certificate did not pass")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.mu < 0:
            raise ValueError("doubling mass mu must be nonnegative")
        if self.switch is None:
            self.switch = SwitchFunction("erf_based", self.cert.g_est)
        if self.is_even:
            self._check_even()
        elif self.H is None:
            raise ValueError("odd setup needs H")

    @property
    def is_even(self) -> bool:
        return self.T is not None

    def _check_even(self):
        if self.gamma is None:
            raise ValueError("even setup needs a grading gamma")
        g = as_matrix(self.gamma)
        D = as_matrix(self.D)
        n = D.shape[0]
        if _maxabs(g @ g - sp.identity(n)) > STRUCTURE_TOL:
            raise ValueError("grading does not square to one")
        if _maxabs(g @ D + D @ g) > STRUCTURE_TOL:
            raise ValueError("grading does not anticommute with D")
        T = as_matrix(self.T)
        if _maxabs(g @ T - T @ g) > STRUCTURE_TOL:
            raise ValueError("even potential must commute with the grading")
        H = self.chiral_hamiltonian()
        J = self.J.matrix if self.J is not None else chiral_grading(n)
        if _maxabs(J @ J - sp.identity(2 * n)) > STRUCTURE_TOL:
            raise ValueError("chiral grading does not square to one")
        if _maxabs(J @ H.matrix @ J + H.matrix) > STRUCTURE_TOL:
            raise ValueError("assembled H is not chiral (JHJ != -H)")
        if self.J is None:
            self.J = HermitianOperator(J)

    def chiral_hamiltonian(self) -> HermitianOperator:
        """``H = [[0, T*], [T, 0]]`` in the chiral (outer) grading."""
        T = sp.csr_matrix(as_matrix(self.T))
        return HermitianOperator(sp.bmat([[None, T.conj().T], [T, None]], format="csr"))

    def grading_split(self):
        """Index arrays of the gamma = +1 and gamma = -1 subspaces (gamma must be diagonal)."""
        g = as_matrix(self.gamma)
        if _maxabs(g - sp.diags(g.diagonal())) > STRUCTURE_TOL:
            raise ValueError("grading must be diagonal in the site basis")
        d = np.real(g.diagonal())
        return np.where(d > 0)[0], np.where(d < 0)[0]

    def chiral_parts(self):
        """Return ``(D0, T_plus, T_minus)`` with ``D0`` mapping gamma=+1 to gamma=-1."""
        plus, minus = self.grading_split()
        D = sp.csr_matrix(as_matrix(self.D))
        T = sp.csr_matrix(as_matrix(self.T))
        return D[minus][:, plus], T[plus][:, plus], T[minus][:, minus]


def chiral_grading(n: int) -> sp.csr_matrix:
    return sp.diags(np.concatenate([np.ones(n), -np.ones(n)]).astype(complex), format="csr")


def _maxabs(M) -> float:
    if sp.issparse(M):
        M = M.tocoo()
        return float(np.abs(M.data).max()) if M.nnz else 0.0
    M = np.asarray(M)
    return float(np.abs(M).max()) if M.size else 0.0


# ---------------------------------------------------------------------------
# operators

def callias_operator(setup: CalliasSetup) -> GeneralOperator:
    """``kappa D + i H``."""
    if setup.is_even:
        raise ValueError("callias_operator needs an odd setup")
    D, H = as_matrix(setup.D), as_matrix(setup.H)
    A = setup.kappa * D + 1j * H
    Aadj = setup.kappa * D - 1j * H
    if _maxabs(A.conj().T - Aadj) > STRUCTURE_TOL * max(1.0, _maxabs(A)):
        raise ValueError("adjoint relation failed")
    return GeneralOperator(A, {"symbol": "D_kappa_H"})


def spectral_localizer(setup: CalliasSetup) -> HermitianOperator:
    """``[[0, (kappa D + i H)*], [kappa D + i H, 0]]``."""
    A = sp.csr_matrix(as_matrix(callias_operator(setup)))
    return HermitianOperator(sp.bmat([[None, A.conj().T], [A, None]], format="csr"))


def even_callias_operator(setup: CalliasSetup, check: bool = True) -> GeneralOperator:
    """``[[T_+, kappa D0*], [kappa D0, -T_-*]]`` on the gamma=+1 part (+) the gamma=-1 part."""
    if not setup.is_even:
        raise ValueError("even_callias_operator needs an even setup")
    D0, Tp, Tm = setup.chiral_parts()
    k = setup.kappa
    De = sp.bmat([[Tp, k * D0.conj().T], [k * D0, -Tm.conj().T]], format="csr")
    if check:
        res = even_decomposition_residual(setup)
        if res > STRUCTURE_TOL * max(1.0, _maxabs(De)):
            raise ValueError(f"even block decomposition failed, residual {res:.3e}")
    return GeneralOperator(De, {"symbol": "D_e"})


def _pi_phi(blocks: int, phi: float) -> sp.csr_matrix:
    e = np.exp(1j * phi)
    P = np.array([[1, 0, 0, 0], [0, 0, 0, e], [0, e, 0, 0], [0, 0, 1, 0]], dtype=complex)
    return sp.kron(sp.csr_matrix(P), sp.identity(blocks), format="csr")


def even_decomposition_residual(setup: CalliasSetup) -> float:
    """Residual of conjugating ``kappa D (x) 1 + i H`` into block off-diagonal form.

    The odd Callias operator of the chiral Hamiltonian is reordered to
    (gamma, J) blocks and compared with ``Pi* [[0, -E], [D^e, 0]] Pi`` where
    ``Pi`` is the phase permutation at angle ``3 pi / 2``.  The lower block
    is ``D^e(kappa, T)`` itself; the upper one works out to be
    ``E = D^e(-kappa, T*)``, i.e. ``D^e(kappa, T*)`` with the sign of the
    Dirac blocks reversed.
    """
    plus, minus = setup.grading_split()
    n = as_matrix(setup.D).shape[0]
    if plus.size != minus.size:
        raise ValueError("grading eigenspaces must have equal dimension")
    D = sp.csr_matrix(as_matrix(setup.D))
    H = setup.chiral_hamiltonian().matrix
    Dk = setup.kappa * sp.kron(sp.identity(2), D, format="csr") + 1j * H
    # J-outer index of (J, i) is J*n + i; reorder to (gamma, J, position-in-gamma-block)
    order = np.concatenate([plus, n + plus, minus, n + minus])
    lhs = Dk[order][:, order]
    D0, Tp, Tm = setup.chiral_parts()
    k = setup.kappa
    De = sp.bmat([[Tp, k * D0.conj().T], [k * D0, -Tm.conj().T]], format="csr")
    E = sp.bmat([[Tp.conj().T, -k * D0.conj().T], [-k * D0, -Tm]], format="csr")
    inner = sp.bmat([[None, -E], [De, None]], format="csr")
    Pi = _pi_phi(plus.size, 3 * np.pi / 2)
    rhs = Pi.conj().T @ inner @ Pi
    return _maxabs(lhs - rhs)


def double_with_mass(D: Any, H: Any, mu: float):
    """``D~ = [[D, mu], [mu, -D]]`` and ``H~ = diag(H, 1)``."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    Dm = sp.csr_matrix(as_matrix(D))
    Hm = sp.csr_matrix(as_matrix(H))
    n = Dm.shape[0]
    Id = sp.identity(n, dtype=complex, format="csr")
    Dt = sp.bmat([[Dm, mu * Id], [mu * Id, -Dm]], format="csr")
    Ht = sp.bmat([[Hm, None], [None, Id]], format="csr")
    return HermitianOperator(Dt), HermitianOperator(Ht)


def kappa0(mode: str, g: float, b: float) -> float:
    """Upper bound on kappa: ``g^2/(2b)`` (bounded) or ``g^2/(b sqrt(1+g^2))`` (unbounded)."""
    if not (g > 0 and b > 0):
        raise ValueError("g and b must be positive")
    if mode == "bounded":
        return g * g / (2 * b)
    if mode == "unbounded":
        return g * g / (b * np.sqrt(1 + g * g))
    raise ValueError(f"unknown kappa0 mode {mode!r}")


# ---------------------------------------------------------------------------
# windows

@dataclass(frozen=True)
class Window:
    """An orthonormal frame ``basis`` (model dim x M) of a finite-volume window.

    ``inner`` marks the frame vectors belonging to the inner half of the
    window; kernel counting uses it to discard vectors living at the edge.
    """

    basis: Any
    inner: np.ndarray
    kind: str
    radius: float
    momentum_radius: float | None = None

    @property
    def size(self) -> int:
        return self.basis.shape[1]

    def frame(self, outer: int = 1):
        if outer == 1:
            return self.basis
        if sp.issparse(self.basis):
            return sp.kron(sp.identity(outer), self.basis, format="csr")
        return np.kron(np.eye(outer), self.basis)

    def compress(self, A: Any) -> np.ndarray:
        """``V* A V`` for A acting on (model space) tensored on the outside with C^r."""
        M = as_matrix(A)
        n = self.basis.shape[0]
        if M.shape[0] % n or M.shape[1] % n:
            raise ValueError(f"operator of shape {M.shape} does not act on the window space")
        Vr = self.frame(M.shape[0] // n)
        Vc = self.frame(M.shape[1] // n)
        out = (M @ Vc)
        out = Vr.conj().T @ out
        return to_dense(out)

    def inner_mask(self, outer: int = 1) -> np.ndarray:
        return np.tile(self.inner, outer)


def site_window(model: LatticeModel, radius: float) -> Window:
    """Dirichlet window of sites with ``max_i |x_i| <= radius`` (in units of the spacing)."""
    coords = model.site_coordinates() / model.spacing
    r = np.abs(coords).max(axis=1) if model.dim > 1 else np.abs(coords[:, 0])
    keep = model.expand(r <= radius + 1e-9)
    if not keep.any():
        raise ValueError(f"window of radius {radius} is empty")
    idx = np.where(keep)[0]
    B = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(model.hilbert_dim, idx.size))
    inner = model.expand(r <= radius / 2 + 1e-9)[idx]
    return Window(B, inner, "sites", float(radius))


def box_window(model: LatticeModel, radii) -> Window:
    """Dirichlet window ``|x_i| <= radii[i]`` (in units of the spacing)."""
    coords = model.site_coordinates() / model.spacing
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (model.dim,))
    ok = np.all(np.abs(coords) <= radii + 1e-9, axis=1)
    inner = np.all(np.abs(coords) <= radii / 2 + 1e-9, axis=1)
    keep = model.expand(ok)
    if not keep.any():
        raise ValueError("box window is empty")
    idx = np.where(keep)[0]
    B = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(model.hilbert_dim, idx.size))
    return Window(B, model.expand(inner)[idx], "box", float(radii.max()))


def compress_to_window(A: Any, model: LatticeModel, radius: float) -> GeneralOperator:
    """Restriction of A to the sites within ``radius`` of the origin."""
    W = site_window(model, radius)
    idx = W.basis.tocoo().row
    M = as_matrix(A)
    sub = M[idx][:, idx] if sp.issparse(M) else np.asarray(M)[np.ix_(idx, idx)]
    return GeneralOperator(sub)


def phase_space_window(model: LatticeModel, radius: float, momentum_radius: float | None = None) -> Window:
    """Low-lying subspace ``K <= 1`` of ``K = |x|^2 / R^2 + (-Delta) / P^2``.

    ``radius`` R is in units of the spacing, ``momentum_radius`` P in
    inverse physical length (default ``1.3 / spacing``).  Unlike a sharp
    site window this frame also cuts off large lattice momenta, so the
    species doublers of the central-difference derivative (near momentum
    pi / spacing) are excluded and a finite-volume index survives.
    """
    P = 1.3 / model.spacing if momentum_radius is None else float(momentum_radius)
    V, k = _phase_space_frame(model, float(radius), P)
    if V.shape[1] == 0:
        raise ValueError("phase-space window is empty")
    B = np.kron(V, np.eye(model.fiber_dim)) if model.fiber_dim > 1 else V
    inner = np.repeat(k <= 0.25, model.fiber_dim)
    return Window(B, inner, "phase_space", float(radius), P)


@lru_cache(maxsize=8)
def _phase_space_frame(model: LatticeModel, radius: float, P: float):
    scalar = LatticeModel(model.dim, model.extent, 1, model.boundary, model.spacing)
    x2 = (scalar.site_coordinates() ** 2).sum(axis=1)
    R = radius * model.spacing
    K = sp.diags(x2 / R**2) + lattice_laplacian(scalar) / P**2
    w, V = eigh(K.toarray())
    sel = w <= 1.0
    V = V[:, sel]
    V.setflags(write=False)
    return V, w[sel]


# ---------------------------------------------------------------------------
# inertia

@dataclass(frozen=True)
class Inertia:
    n_plus: int
    n_zero: int
    n_minus: int
    zero_tol: float
    gap: float
    method: str = "eigh"

    @property
    def signature(self) -> int:
        return self.n_plus - self.n_minus

    @property
    def dimension(self) -> int:
        return self.n_plus + self.n_zero + self.n_minus


def _inertia_eigh(M: np.ndarray, tol: float) -> Inertia:
    w = sla.eigvalsh(M, check_finite=False)
    pos = int((w > tol).sum())
    neg = int((w < -tol).sum())
    big = np.abs(w[np.abs(w) > tol])
    gap = float(big.min()) if big.size else 0.0
    return Inertia(pos, w.size - pos - neg, neg, tol, gap, "eigh")


def _smallest_abs_eig(M: np.ndarray) -> float:
    lu = sla.lu_factor(M, check_finite=False)
    n = M.shape[0]
    op = spla.LinearOperator((n, n), matvec=lambda v: sla.lu_solve(lu, v, check_finite=False),
                             dtype=complex)
    # three digits are plenty for a gap diagnostic
    val = spla.eigsh(op, k=1, which="LM", return_eigenvectors=False, tol=1e-3, ncv=min(n, 24))
    return float(1.0 / abs(val[0]))


def _inertia_ldl(M: np.ndarray, tol: float, want_gap: bool) -> Inertia | None:
    M = M.copy()
    np.fill_diagonal(M, M.diagonal().real)
    _, Dblk, _ = sla.ldl(M, hermitian=True, check_finite=False)
    n = M.shape[0]
    pivots = []
    i = 0
    while i < n:
        if i + 1 < n and Dblk[i + 1, i] != 0:
            pivots.extend(np.linalg.eigvalsh(Dblk[i:i + 2, i:i + 2]))
            i += 2
        else:
            pivots.append(Dblk[i, i].real)
            i += 1
    p = np.asarray(pivots)
    if np.any(np.abs(p) <= 10 * tol) or not np.all(np.isfinite(p)):
        return None
    gap = _smallest_abs_eig(M) if want_gap else float("nan")
    if want_gap and gap <= 10 * tol:
        return None
    return Inertia(int((p > 0).sum()), 0, int((p < 0).sum()), tol, gap, "ldl")


def inertia(Hm: Any, zero_tol: float | None = None, method: str = "auto", want_gap: bool = True) -> Inertia:
    """Eigenvalue counts above, inside and below ``[-zero_tol, zero_tol]``.

    Large matrices use a Bunch-Kaufman LDL* factorization (Sylvester's law
    of inertia) and fall back to a full eigendecomposition whenever a pivot
    comes within ten tolerances of zero.  ``method='both'`` runs both and
    raises if the counts differ.
    """
    M = to_dense(Hm)
    n = M.shape[0]
    if zero_tol is None:
        zero_tol = 1e-8 * max(1.0, float(np.abs(M).sum(axis=1).max()) if n else 1.0)
    if zero_tol < 0:
        raise ValueError("zero_tol must be nonnegative")
    if method == "eigh" or (method == "auto" and n < LDL_THRESHOLD):
        return _inertia_eigh(M, zero_tol)
    if method in ("ldl", "auto"):
        res = _inertia_ldl(M, zero_tol, want_gap)
        return res if res is not None else _inertia_eigh(M, zero_tol)
    if method == "both":
        a = _inertia_eigh(M, zero_tol)
        b = _inertia_ldl(M, zero_tol, want_gap=False)
        if b is not None and (a.n_plus, a.n_minus) != (b.n_plus, b.n_minus):
            raise ArithmeticError(f"LDL inertia {b} disagrees with eigendecomposition {a}")
        return a
    raise ValueError(f"unknown inertia method {method!r}")


def half_signature(L: np.ndarray, zero_tol: float | None = None, who: str = "localizer") -> tuple[int, Inertia]:
    inn = inertia(L, zero_tol)
    if inn.n_zero or not inn.gap > 10 * inn.zero_tol:
        raise WindowError(f"{who} not gapped (gap {inn.gap:.3e}): window too small or kappa too large")
    if inn.signature % 2:
        raise WindowError(f"{who} has odd signature {inn.signature}")
    return inn.signature // 2, inn


def odd_localizer(kD: np.ndarray, U: np.ndarray) -> np.ndarray:
    """``[[kappa D, U*], [U, -kappa D]]`` from compressed blocks."""
    return np.block([[kD, U.conj().T], [U, -kD]])


# ---------------------------------------------------------------------------
# engines

@dataclass(frozen=True)
class SignatureIndex:
    index: int
    gap: float
    partner_gap: float
    window_size: int
    mass_flip_signature: int | None = None
    diagnostics: dict = field(default_factory=dict)

    def __int__(self):
        return self.index


def signature_index_odd(setup: CalliasSetup, window_radius: float | None = None, m: float = 1.0,
                        window: Window | None = None, momentum_radius: float | None = None,
                        U: Any = None, mass_flip_diagnostic: bool = False) -> SignatureIndex:
    """Finite-volume index of the doubled Callias operator.

    The doubled pair ``D~ = [[D, mu], [mu, -D]]``, ``U~ = diag(U, f(1))`` with
    ``f = exp(i pi (G + 1))`` enters the odd localizer
    ``[[kappa D~, U~*], [U~, -kappa D~]]``; half its signature on a
    phase-space window, minus that of the trivial partner ``U~ = 1``, is
    the index.  With ``mass_flip_diagnostic`` the literal signature
    difference of the ``+-i m`` mass matrices is also reported (it vanishes
    identically in finite dimensions: both endpoints are conjugate to
    matrices of the form ``[[-+m, A], [A*, +-m]]``).
    """
    if setup.is_even:
        raise ValueError("signature_index_odd needs an odd setup")
    model = setup.model
    if window is None:
        if model is None or window_radius is None:
            raise ValueError("need a window or a model with window_radius")
        window = phase_space_window(model, window_radius, momentum_radius)
    if U is None:
        U = potential_unitary(setup.H, setup.switch, model=model)
    Dc = window.compress(setup.D)
    Uc = window.compress(U)
    n = Dc.shape[0]
    Id = np.eye(n)
    mu, k = setup.mu, setup.kappa
    f1 = complex(unitary_phase_function(setup.switch)(np.array([1.0]))[0])
    Dt = np.block([[Dc, mu * Id], [mu * Id, -Dc]])
    Ut = np.block([[Uc, 0 * Id], [0 * Id, f1 * Id]])
    idx, inn = half_signature(odd_localizer(k * Dt, Ut))
    ref, inn0 = half_signature(odd_localizer(k * Dt, np.eye(2 * n)), who="partner localizer")
    if ref != 0:
        raise WindowError(f"trivial partner localizer has half-signature {ref}")
    flip = None
    if mass_flip_diagnostic:
        Hc = window.compress(setup.H)
        Ht = np.block([[Hc, 0 * Id], [0 * Id, Id]])
        sig = []
        for s in (+1, -1):
            B = np.block([[k * Dt, Ht - s * 1j * m * np.eye(2 * n)], [Ht + s * 1j * m * np.eye(2 * n), -k * Dt]])
            sig.append(inertia(B).signature)
        flip = -(sig[0] - sig[1]) // 2
    return SignatureIndex(idx - ref, inn.gap, inn0.gap, window.size, flip,
                          {"mu": mu, "kappa": k, "n_plus": inn.n_plus, "n_minus": inn.n_minus})


@dataclass(frozen=True)
class KernelCount:
    index: int
    raw_index: int
    n_kernel: int
    n_cokernel: int
    kernel_masses: tuple
    cokernel_masses: tuple
    ambiguous: bool
    smallest_singular_values: tuple = ()

    def __int__(self):
        return self.index


def _interior_masses(vectors: np.ndarray, inner: np.ndarray | None) -> np.ndarray:
    if vectors.shape[1] == 0:
        return np.zeros(0)
    if inner is None:
        return np.ones(vectors.shape[1])
    Vi = vectors[inner]
    return np.clip(np.linalg.eigvalsh(Vi.conj().T @ Vi), 0.0, 1.0)[::-1]


def kernel_count_index(A: Any, model: LatticeModel | None = None, window_radius: float | None = None,
                       sv_tol: float = 1e-6, interior_fraction: float = 0.5, window: Window | None = None,
                       momentum_radius: float | None = None, orientation: int = 1) -> KernelCount:
    """Interior-filtered ``dim ker - dim coker`` of a window compression.

    Near-kernel vectors of the compressed operator and of its adjoint are
    found by SVD.  Interior masses are the eigenvalues of the inner-window
    projection restricted to each near-kernel subspace (basis independent,
    so degenerate edge modes do not mix into the count).  A vector counts
    when its mass is at least ``interior_fraction``.
    """
    if window is None and model is not None and window_radius is not None:
        window = phase_space_window(model, window_radius, momentum_radius)
    if window is not None:
        M = window.compress(A)
        n = window.basis.shape[0]
        inner_r = window.inner_mask(as_matrix(A).shape[0] // n)
        inner_c = window.inner_mask(as_matrix(A).shape[1] // n)
    else:
        M = to_dense(A)
        inner_r = inner_c = None
    rows, cols = M.shape
    Wl, s, Vh = np.linalg.svd(M, full_matrices=True)
    small = np.zeros(cols, dtype=bool)
    small[: s.size] = s < sv_tol
    small[s.size:] = True
    ker = Vh.conj().T[:, small]
    small_l = np.zeros(rows, dtype=bool)
    small_l[: s.size] = s < sv_tol
    small_l[s.size:] = True
    coker = Wl[:, small_l]
    mk = _interior_masses(ker, inner_c)
    mc = _interior_masses(coker, inner_r)
    nk = int((mk >= interior_fraction).sum())
    nc = int((mc >= interior_fraction).sum())
    ambiguous = bool(np.any(np.abs(np.concatenate([mk, mc]) - interior_fraction) < 0.1))
    if ambiguous:
        warnings.warn("kernel vector with interior mass close to threshold; result flagged", RuntimeWarning)
    raw = nk - nc
    return KernelCount(orientation * raw, raw, nk, nc, tuple(np.round(mk, 6)), tuple(np.round(mc, 6)),
                       ambiguous, tuple(np.sort(s)[:4]))
