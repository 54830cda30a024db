"""Index pairings: odd localizer pairing, winding traces, Chern numbers, boundary data, even pairing."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.sparse as sp

from .calculus import SwitchFunction, apply_function, eigh
from .flow import WINDING_NORMALIZATION, straight_line_flow
from .localizer import (EVEN_LOCALIZER_ORIENTATION, STRUCTURE_TOL, Window, WindowError, half_signature,
                        odd_localizer)
from .operators import (LatticeModel, PositionDerivation, TraceWeights, as_matrix, commutator, to_dense,
                        weighted_trace)

UNITARY_TOL = 1e-10
IDEMPOTENT_TOL = 1e-8
SUPPORT_TOL = 1e-8
EDGE_TOL = 1e-8

# With a position-type derivation (D = X) the winding trace of a unit
# interface pairing evaluates to -1, not -2 pi: there is no Fourier factor.
POSITION_WINDING_NORMALIZATION = -1.0
CHERN_CALIBRATION = 2j * np.pi


class SupportLeakError(ValueError):
    """U - 1 (or a winding integrand) is not negligible at the truncation edge."""


def _unitarity_defect(U) -> float:
    if sp.issparse(U):
        R = (U.conj().T @ U - sp.identity(U.shape[1], format="csr")).tocoo()
        return float(np.abs(R.data).max(initial=0.0))
    return float(np.abs(U.conj().T @ U - np.eye(U.shape[1])).max(initial=0.0))


def _absmax_lines(A, mask: np.ndarray) -> float:
    """Largest entry of A in the rows or columns flagged by ``mask``."""
    if not mask.any():
        return 0.0
    if sp.issparse(A):
        A = A.tocsr()
        r, c = A[mask], A[:, mask]
        return float(max(np.abs(r.data).max(initial=0.0), np.abs(c.tocoo().data).max(initial=0.0)))
    return float(max(np.abs(A[mask]).max(), np.abs(A[:, mask]).max()))


def _projection_defect(P) -> float:
    P = to_dense(P)
    return float(np.abs(P @ P - P).max(initial=0.0))


# ---------------------------------------------------------------------------
# odd pairing

@dataclass(frozen=True)
class OddPairing:
    index: int
    gap: float
    partner_gap: float
    commutator_bound: float
    support_leak: float

    def __int__(self):
        return self.index


def support_leak(U: Any, outside: np.ndarray) -> float:
    """Largest entry of ``U - 1`` in a row or column flagged by ``outside``."""
    M = as_matrix(U)
    if sp.issparse(M):
        return _absmax_lines(M - sp.identity(M.shape[0], format="csr"), outside)
    return _absmax_lines(np.asarray(M) - np.eye(M.shape[0]), outside)


def window_outside(window: Window, model: LatticeModel) -> np.ndarray:
    """Sites (expanded over the fiber) not covered by the window's spatial extent."""
    if window.kind == "phase_space":
        coords = model.site_coordinates() / model.spacing
        r = np.sqrt((coords**2).sum(axis=1))
        return model.expand(r > window.radius)
    B = as_matrix(window.basis)
    covered = np.asarray(abs(B).sum(axis=1)).ravel() > 0
    return ~covered


def odd_index_pairing(D: Any, U: Any, kappa: float, window_radius: float | None = None,
                      window: Window | None = None, model: LatticeModel | None = None,
                      support_tol: float = SUPPORT_TOL) -> OddPairing:
    """Half-signature of ``[[kappa D, U*], [U, -kappa D]]`` compressed to a window.

    The trivial partner ``U = 1`` must have half-signature zero; the window
    compression must satisfy ``kappa ||[D, U]|| < 1`` and ``U - 1`` must
    vanish (to ``support_tol``) outside the window.
    """
    from .localizer import phase_space_window

    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if window is None:
        if model is None or window_radius is None:
            raise ValueError("need a window or a model with window_radius")
        window = phase_space_window(model, window_radius)
    Ud = as_matrix(U)
    leak = 0.0
    if model is not None:
        leak = support_leak(Ud, window_outside(window, model))
        if leak > support_tol:
            raise SupportLeakError(f"U - 1 reaches the window boundary (leak {leak:.3e} > {support_tol:.1e})")
    Dc = window.compress(D)
    Uc = window.compress(Ud)
    if _unitarity_defect(Ud) > 1e-6:
        raise ValueError("U is not unitary")
    bound = kappa * float(np.linalg.norm(Dc @ Uc - Uc @ Dc, 2))
    if not bound < 1:
        raise ValueError(f"kappa ||[D, U]|| = {bound:.3f} must be below 1")
    n = Dc.shape[0]
    idx, inn = half_signature(odd_localizer(kappa * Dc, Uc), who="odd pairing localizer")
    ref, inn0 = half_signature(odd_localizer(kappa * Dc, np.eye(n)), who="partner localizer")
    if ref != 0:
        raise WindowError(f"trivial partner localizer has half-signature {ref}")
    return OddPairing(idx, inn.gap, inn0.gap, bound, leak)


# ---------------------------------------------------------------------------
# winding trace

@dataclass(frozen=True)
class WindingTrace:
    value: int
    raw: complex
    normalized: float
    normalization: float
    edge_max: float

    def __int__(self):
        return self.value


def nc_winding(U: Any, D: Any, weights: TraceWeights, normalization: float | None = None,
               edge_mask: np.ndarray | None = None, edge_tol: float = EDGE_TOL) -> WindingTrace:
    """Weighted trace of ``(1 - U*) [D, U]``, divided by ``normalization``.

    ``D`` is a Hermitian operator or a :class:`PositionDerivation`.  The
    default normalization is the shared winding constant for derivative-type
    D and the position constant for a position derivation.  ``edge_mask``
    flags the rows/columns at the truncation edge where the integrand must
    be below ``edge_tol``.
    """
    if normalization is None:
        normalization = (POSITION_WINDING_NORMALIZATION if isinstance(D, PositionDerivation)
                         else WINDING_NORMALIZATION)
    Ud = as_matrix(U)
    if isinstance(D, PositionDerivation):
        Ud = to_dense(Ud)
    n = Ud.shape[0]
    defect = _unitarity_defect(Ud)
    if not np.isfinite(defect) or defect > 1e-6:
        raise ValueError("U is not unitary")
    C = commutator(D, Ud)
    if sp.issparse(Ud):
        A = (sp.identity(n, format="csr") - Ud.conj().T) @ sp.csr_matrix(C)
    else:
        A = (np.eye(n) - Ud.conj().T) @ to_dense(C)
    edge = 0.0
    if edge_mask is not None:
        edge = _absmax_lines(A, edge_mask)
        if edge > edge_tol:
            raise SupportLeakError(f"winding integrand at the truncation edge is {edge:.3e} > {edge_tol:.1e}")
    raw = complex(weighted_trace(A, weights))
    val = raw / normalization
    return WindingTrace(int(np.rint(val.real)), raw, float(val.real), float(normalization), edge)


def edge_sites(model: LatticeModel) -> np.ndarray:
    """Outermost layer of an open lattice (expanded over the fiber); empty for periodic models."""
    if model.boundary == "periodic":
        return np.zeros(model.hilbert_dim, dtype=bool)
    idx = model.site_indices()
    ext = np.asarray(model.extent)
    outer = np.any((idx == 0) | (idx == ext - 1), axis=1)
    return model.expand(outer)


# ---------------------------------------------------------------------------
# Chern number

@dataclass(frozen=True)
class ChernNumber:
    value: float
    nearest: int
    distance: float
    calibration: complex


def cell_weights(model: LatticeModel, collar: int = 4) -> TraceWeights:
    """Trace per site: uniform on a torus, interior minus a collar on open lattices."""
    if model.boundary == "periodic":
        keep = np.ones(model.n_sites, dtype=bool)
    else:
        idx = model.site_indices()
        ext = np.asarray(model.extent)
        keep = np.all((idx >= collar) & (idx < ext - collar), axis=1)
        if not keep.any():
            raise ValueError(f"collar {collar} leaves no interior sites")
    w = model.expand(keep).astype(float) / keep.sum()
    return TraceWeights(w)


def chern_number(P: Any, X1: Any, X2: Any, weights: TraceWeights) -> ChernNumber:
    """``2 pi i`` times the weighted trace of ``P [[X1, P], [X2, P]]``."""
    Pd = to_dense(P)
    if _projection_defect(Pd) > IDEMPOTENT_TOL:
        raise ValueError("P is not idempotent")
    C1 = to_dense(commutator(X1, Pd))
    C2 = to_dense(commutator(X2, Pd))
    val = CHERN_CALIBRATION * weighted_trace(Pd @ (C1 @ C2 - C2 @ C1), weights)
    if abs(val.imag) > 1e-6 * max(1.0, abs(val.real)):
        raise ArithmeticError(f"Chern trace has imaginary part {val.imag:.3e}")
    v = float(val.real)
    k = int(np.rint(v))
    return ChernNumber(v, k, abs(v - k), CHERN_CALIBRATION)


def fermi_projection(H: Any, fermi_level: float, min_gap: float = 1e-3) -> np.ndarray:
    """Spectral projection below ``fermi_level``; the level must sit in a gap."""
    w, V = eigh(to_dense(H))
    dist = float(np.abs(w - fermi_level).min())
    if dist < min_gap:
        raise ValueError(f"Fermi level {fermi_level} is within {dist:.2e} of the spectrum")
    B = V[:, w < fermi_level]
    return B @ B.conj().T


# ---------------------------------------------------------------------------
# boundary invariants

def _signature(Q: np.ndarray, who: str) -> int:
    w = np.linalg.eigvalsh((Q + Q.conj().T) / 2)
    if np.abs(w).min(initial=np.inf) < 1e-10 * max(1.0, np.abs(w).max(initial=0.0)):
        raise ValueError(f"{who} is not invertible")
    return int((w > 0).sum() - (w < 0).sum())


def _chiral_off_block(Q: np.ndarray, J: np.ndarray) -> np.ndarray:
    if np.abs(J @ Q @ J + Q).max() > 1e-8 * max(1.0, np.abs(Q).max()):
        raise ValueError("loop sample is not chiral (JQJ != -Q)")
    w, V = np.linalg.eigh(J)
    Bp, Bm = V[:, w > 0], V[:, w < 0]
    if Bp.shape[1] != Bm.shape[1]:
        raise ValueError("chiral grading must be balanced")
    return Bm.conj().T @ Q @ Bp


def boundary_invariant(mode: str, data: Any, J: Any = None) -> int:
    """Boundary index from asymptotic potential data.

    ``endpoints_1d``: ``data = (Q_minus, Q_plus)`` and the result is half the
    signature jump.  ``loop_2d``: ``data`` is a closed loop sampled as a
    sequence of chiral matrices ``Q(phi_k)`` (first point not repeated);
    the result is the winding of ``det`` of the off-diagonal block, i.e.
    the normalized loop integral of ``Tr(J Q dQ)``.
    """
    if mode == "endpoints_1d":
        Qm, Qp = (np.atleast_2d(to_dense(q)) for q in data)
        s = _signature(Qp, "Q(+inf)") - _signature(Qm, "Q(-inf)")
        if s % 2:
            raise ArithmeticError("signature jump is odd")
        return s // 2
    if mode == "loop_2d":
        samples = [np.atleast_2d(to_dense(q)) for q in data]
        if len(samples) < 3:
            raise ValueError("loop needs at least three samples")
        Jd = np.diag([1.0, -1.0]) if J is None else to_dense(J)
        dets = []
        for q in samples:
            d = np.linalg.det(_chiral_off_block(q, Jd))
            if abs(d) < 1e-12:
                raise ValueError("boundary loop sample is not invertible")
            dets.append(d / abs(d))
        dets = np.asarray(dets)
        steps = np.angle(np.roll(dets, -1) / dets)
        if np.abs(steps).max() > 0.5 * np.pi:
            raise ValueError("loop sampled too coarsely for phase tracking")
        return int(np.rint(steps.sum() / (2 * np.pi)))
    raise ValueError(f"unknown boundary mode {mode!r}")


# ---------------------------------------------------------------------------
# chiral projection, skew corner, even pairing

@dataclass(frozen=True)
class ChiralProjectionData:
    S: np.ndarray
    P: np.ndarray
    J: np.ndarray
    formula_gap: float


def chiral_projection(H: Any, J: Any, G: SwitchFunction, model: LatticeModel | None = None) -> ChiralProjectionData:
    """``S = J exp(i pi G(H))``, checked against ``exp(-i pi G/2) J exp(i pi G/2)``; ``P = (1 - S)/2``."""
    Hm = as_matrix(H)
    Jd = to_dense(J)
    Hd = to_dense(Hm)
    if np.abs(Jd @ Hd @ Jd + Hd).max(initial=0.0) > STRUCTURE_TOL:
        raise ValueError("H is not chiral: JHJ != -H")
    E = to_dense(apply_function(Hm, lambda x: np.exp(1j * np.pi * G(x)), model=model).matrix)
    Eh = to_dense(apply_function(Hm, lambda x: np.exp(0.5j * np.pi * G(x)), model=model).matrix)
    S1 = Jd @ E
    S2 = Eh.conj().T @ Jd @ Eh
    gap = float(np.abs(S1 - S2).max(initial=0.0))
    if gap > 1e-10:
        raise ArithmeticError(f"the two formulas for S differ by {gap:.3e}")
    S = (S1 + S1.conj().T) / 2
    n = S.shape[0]
    return ChiralProjectionData(S, (np.eye(n) - S) / 2, Jd, gap)


def _range(P: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((P + P.conj().T) / 2)
    return V[:, w > 0.5]


def _null_count(M: np.ndarray, tol: float) -> int:
    if M.shape[1] == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    full = np.zeros(M.shape[1])
    full[: s.size] = s
    return int((full <= tol).sum())


def skew_corner_index(T: Any, P: Any, Q: Any, tol: float = 1e-8) -> int:
    """``dim(ker T cap ran Q) - dim(ker T* cap ran P)`` for ``T = P T Q``."""
    Td, Pd, Qd = to_dense(T), to_dense(P), to_dense(Q)
    for M, name in ((Pd, "P"), (Qd, "Q")):
        if _projection_defect(M) > IDEMPOTENT_TOL:
            raise ValueError(f"{name} is not a projection")
    if np.abs(Pd @ Td @ Qd - Td).max(initial=0.0) > tol * max(1.0, np.abs(Td).max(initial=0.0)):
        raise ValueError("T is not a corner operator: P T Q != T")
    BQ, BP = _range(Qd), _range(Pd)
    return _null_count(Td @ BQ, tol) - _null_count(Td.conj().T @ BP, tol)


def polar_phase(D0: Any, tol: float = UNITARY_TOL) -> np.ndarray:
    """Unitary phase ``D0 |D0|^{-1}`` of an invertible square matrix."""
    M = to_dense(D0)
    if M.shape[0] != M.shape[1]:
        raise ValueError("D0 must be square")
    W, s, Vh = np.linalg.svd(M)
    if s.min(initial=np.inf) < 1e-10 * max(1.0, s.max(initial=0.0)):
        raise ValueError("D0 is singular; apply the doubling mass first")
    F = W @ Vh
    if _unitarity_defect(F) > tol:
        raise ArithmeticError("polar phase is not unitary within tolerance")
    return F


@dataclass(frozen=True)
class EvenPairing:
    index: int
    mode: str
    gap: float | None = None

    def __int__(self):
        return self.index


def even_pairing(P_plus: Any = None, P_minus: Any = None, F: Any = None, *, mode: str = "skew_corner",
                 S_plus: Any = None, S_minus: Any = None, D0: Any = None, kappa: float | None = None,
                 window: Window | None = None) -> EvenPairing:
    """Even index pairing.

    ``mode='skew_corner'`` evaluates ``SF(1 - 2 P_-, F (1 - 2 P_+) F*)`` as a
    straight-line flow and cross-checks it against the skew-corner index of
    ``P_+ F* P_-``.  On a finite lattice both reduce to ``rank P_- - rank P_+``
    because ``F`` is an honest unitary there.  ``mode='localizer'`` is the
    finite-volume engine: half the signature of
    ``[[S_+, kappa D0*], [kappa D0, -S_-]]`` compressed to ``window`` (J-space
    outer, lattice inner), with ``D0`` mapping grading +1 to grading -1.
    """
    if mode == "skew_corner":
        Pp, Pm, Fd = to_dense(P_plus), to_dense(P_minus), to_dense(F)
        if _unitarity_defect(Fd) > UNITARY_TOL:
            raise ValueError("F is not unitary")
        n = Pp.shape[0]
        A0 = np.eye(n) - 2 * Pm
        A1 = Fd @ (np.eye(n) - 2 * Pp) @ Fd.conj().T
        sf = straight_line_flow(A0, A1)
        T = Pp @ Fd.conj().T @ Pm
        sk = skew_corner_index(T, Pp, Pm)
        if sf != sk:
            raise ArithmeticError(f"straight-line flow {sf} disagrees with skew-corner index {sk}")
        return EvenPairing(sk, mode)
    if mode == "localizer":
        if kappa is None or not kappa > 0 or D0 is None or S_plus is None:
            raise ValueError("localizer mode needs S_plus, D0 and a positive kappa")
        Sp = S_plus
        Sm = S_plus if S_minus is None else S_minus
        Dm = as_matrix(D0)
        n = Dm.shape[1]
        r = as_matrix(Sp).shape[0] // n
        Dk = sp.kron(sp.identity(r), sp.csr_matrix(Dm), format="csr")
        if window is not None:
            Spc, Smc = window.compress(Sp), window.compress(Sm)
            Dc = window.compress(Dk)
        else:
            Spc, Smc, Dc = to_dense(Sp), to_dense(Sm), to_dense(Dk)
        L = np.block([[Spc, kappa * Dc.conj().T], [kappa * Dc, -Smc]])
        half, inn = half_signature(L, who="even localizer")
        return EvenPairing(EVEN_LOCALIZER_ORIENTATION * half, mode, inn.gap)
    raise ValueError(f"unknown even pairing mode {mode!r}")


def site_local_chiral_unitary(t: np.ndarray, G: SwitchFunction) -> np.ndarray:
    """``S = J exp(i pi G(H))`` for ``H = [[0, T*], [T, 0]]`` with ``T = diag(t)``.

    Closed form per site: ``exp(i pi G(H)) = cos(pi G(|t|)) + i sin(pi G(|t|)) H / |t|``.
    """
    t = np.asarray(t, dtype=complex).ravel()
    r = np.abs(t)
    ph = np.where(r > 0, t / np.where(r > 0, r, 1), 1)
    th = np.pi * G(r)
    c, s = np.cos(th), np.sin(th)
    return np.block([[np.diag(c), np.diag(1j * s * np.conj(ph))], [np.diag(-1j * s * ph), np.diag(-c)]])
