"""Spectral functional calculus, switch functions and related certificates."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import erf

from .operators import (GeneralOperator, HermitianOperator, LatticeModel, as_matrix,
                        commutator_norm, to_dense)

SWITCH_KINDS = ("erf_based", "poly_smoothstep", "sine_ramp")


class EigensolverError(RuntimeError):
    pass


def eigh(M: np.ndarray):
    """Dense Hermitian eigendecomposition via LAPACK's MRRR driver, falling back to divide and conquer."""
    try:
        return sla.eigh(M, driver="evr", check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        try:
            return np.linalg.eigh(M)
        except np.linalg.LinAlgError as exc:
            raise EigensolverError(f"Hermitian eigensolver failed: {exc}") from exc


def site_labels(model: LatticeModel, dim: int) -> np.ndarray:
    """Site index of every basis vector of ``model`` Hilbert space (x) C^r, r-outer."""
    if dim % model.hilbert_dim:
        raise ValueError(f"dimension {dim} is not a multiple of the model dimension {model.hilbert_dim}")
    return (np.arange(dim) % model.hilbert_dim) // model.fiber_dim


def _site_blocks(M, labels: np.ndarray):
    """Return (order, nblock, bsize) if M only couples basis vectors of equal site label."""
    labels = np.unique(labels, return_inverse=True)[1].ravel()
    if sp.issparse(M):
        C = M.tocoo()
        if np.any(labels[C.row] != labels[C.col]):
            return None
    else:
        same = labels[:, None] == labels[None, :]
        if np.any(np.abs(M[~same]) > 0):
            return None
    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels)
    if np.any(counts != counts[0]):
        return None
    return order, counts.size, int(counts[0])


def _blockwise_eig(M, blocks):
    order, nb, b = blocks
    Md = M[order][:, order]
    Md = Md.toarray() if sp.issparse(Md) else np.asarray(Md)
    stack = np.stack([Md[k * b:(k + 1) * b, k * b:(k + 1) * b] for k in range(nb)])
    w, V = np.linalg.eigh(stack)
    return order, w, V


def apply_function(H: Any, f: Callable[[np.ndarray], np.ndarray], model: LatticeModel | None = None,
                   hermitian_output: bool | None = None) -> GeneralOperator:
    """Evaluate ``f(H)`` in an orthonormal eigenbasis of H.

    If ``model`` is given and H only couples degrees of freedom on the same
    site, the decomposition is done site by site and the result is sparse.
    """
    M = as_matrix(H)
    if isinstance(H, GeneralOperator) and not isinstance(H, HermitianOperator):
        HermitianOperator(M)
    n = M.shape[0]
    blocks = None
    if model is not None:
        blocks = _site_blocks(M, site_labels(model, n))
    if blocks is not None:
        order, w, V = _blockwise_eig(M, blocks)
        fw = np.asarray(f(w.ravel()), dtype=complex).reshape(w.shape)
        local = np.einsum("kij,kj,klj->kil", V, fw, V.conj())
        out = sp.block_diag(list(local), format="csr")
        inv = np.empty_like(order)
        inv[order] = np.arange(n)
        out = out[inv][:, inv].tocsr()
        real = np.all(np.abs(fw.imag) == 0)
    else:
        w, V = eigh(to_dense(M))
        fw = np.asarray(f(w), dtype=complex)
        out = (V * fw) @ V.conj().T
        real = np.all(np.abs(fw.imag) == 0)
    if hermitian_output is None:
        hermitian_output = bool(real)
    if hermitian_output:
        if sp.issparse(out):
            out = ((out + out.conj().T) * 0.5).tocsr()
        else:
            out = (out + out.conj().T) * 0.5
        return HermitianOperator(out, tol=1e-9)
    return GeneralOperator(out)


def _g_unit(kind: str, s: np.ndarray) -> np.ndarray:
    s = np.clip(np.asarray(s, dtype=float), -1.0, 1.0)
    if s.ndim == 0:
        return _g_unit(kind, s[None])[0]
    if kind == "poly_smoothstep":
        return (15 * s - 10 * s**3 + 3 * s**5) / 8
    if kind == "sine_ramp":
        return np.sin(np.pi * s / 2)
    if kind == "erf_based":
        inside = np.abs(s) < 1
        out = np.sign(s).astype(float)
        si = s[inside]
        out[inside] = erf(si / (1 - si**2))
        return out
    raise ValueError(f"unknown switch kind {kind!r}")


def _g_unit_prime(kind: str, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim == 0:
        return _g_unit_prime(kind, s[None])[0]
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    if kind == "poly_smoothstep":
        out[inside] = 15 * (1 - si**2) ** 2 / 8
    elif kind == "sine_ramp":
        out[inside] = np.pi / 2 * np.cos(np.pi * si / 2)
    elif kind == "erf_based":
        u = si / (1 - si**2)
        out[inside] = 2 / np.sqrt(np.pi) * np.exp(-u**2) * (1 + si**2) / (1 - si**2) ** 2
    else:
        raise ValueError(f"unknown switch kind {kind!r}")
    return out


def fourier_l1_norm(phi: Callable[[np.ndarray], np.ndarray], half_width: float = 1.0,
                    tol: float = 1e-6, eta_max: float = 400.0) -> float:
    """``int |(F phi)(xi)| d xi`` with ``(F phi)(xi) = (2 pi)^-1 int phi(x) e^{-i xi x} dx``.

    ``phi`` must vanish outside ``[-half_width, half_width]``.  The inner
    integral uses Gauss-Legendre nodes, the outer one composite Simpson on
    a grid that is doubled until two consecutive values agree to ``tol``
    (relative).  A tail estimate assuming ``|F phi| ~ xi^-2`` is added.
    """
    nodes, wts = np.polynomial.legendre.leggauss(600)
    x = nodes * half_width
    wx = wts * half_width * np.asarray(phi(x), dtype=complex)
    emax = eta_max / half_width

    def total(npts):
        eta = np.linspace(0.0, emax, 2 * npts + 1)
        vals = np.empty(eta.size)
        for start in range(0, eta.size, 2000):
            e = eta[start:start + 2000]
            vals[start:start + 2000] = np.abs(np.exp(-1j * np.outer(e, x)) @ wx) / (2 * np.pi)
        h = eta[1] - eta[0]
        simpson = h / 3 * (vals[0] + vals[-1] + 4 * vals[1:-1:2].sum() + 2 * vals[2:-1:2].sum())
        # |F phi| ~ c xi^-2 with an oscillating c: fit c on the last fifth of the grid
        last = eta.size // 5
        tail = float(np.mean(vals[-last:] * eta[-last:] ** 2)) / emax
        return 2 * (simpson + tail)

    n = 4000
    prev = total(n)
    for _ in range(6):
        n *= 2
        cur = total(n)
        if abs(cur - prev) <= tol * max(1.0, abs(cur)):
            return float(cur)
        prev = cur
    raise ArithmeticError("Fourier norm quadrature did not converge (Richardson check failed)")


@lru_cache(maxsize=None)
def _unit_switch_fourier_norm(kind: str) -> float:
    return fourier_l1_norm(lambda s: _g_unit_prime(kind, s))


@lru_cache(maxsize=None)
def _unit_unitary_fourier_norm(kind: str) -> float:
    def phi(s):
        return 1j * np.pi * _g_unit_prime(kind, s) * np.exp(1j * np.pi * (_g_unit(kind, s) + 1))
    return fourier_l1_norm(phi)


@dataclass(frozen=True)
class SwitchFunction:
    """Smooth nondecreasing odd function equal to -1 below -g/2 and +1 above g/2."""

    kind: str = "erf_based"
    g: float = 1.0

    def __post_init__(self):
        if self.kind not in SWITCH_KINDS:
            raise ValueError(f"unknown switch kind {self.kind!r}; expected one of {SWITCH_KINDS}")
        if not self.g > 0:
            raise ValueError(f"switch gap g must be positive, got {self.g}")

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        return _g_unit(self.kind, lam / (self.g / 2))

    def derivative(self, lam):
        lam = np.asarray(lam, dtype=float)
        return _g_unit_prime(self.kind, lam / (self.g / 2)) * (2 / self.g)

    def fourier_l1(self) -> float:
        """L1 norm of the Fourier transform of G'."""
        return _unit_switch_fourier_norm(self.kind) * 2 / self.g

    def unitary_fourier_l1(self) -> float:
        """L1 norm of the Fourier transform of the derivative of exp(i pi (G + 1))."""
        return _unit_unitary_fourier_norm(self.kind) * 2 / self.g


def switch_function(kind: str = "erf_based", g: float = 1.0) -> SwitchFunction:
    return SwitchFunction(kind, g)


@dataclass(frozen=True)
class SmoothFunction:
    """A function with enough Fourier data for the commutator transfer bound.

    ``fourier_l1`` is the L1 norm of the Fourier transform of ``f'``, either a
    number or a zero-argument callable evaluated on first use.
    """

    f: Callable[[np.ndarray], np.ndarray]
    fourier_l1: float | Callable[[], float]

    def __call__(self, lam):
        return self.f(lam)

    @property
    def fourier_l1_of_derivative(self) -> float:
        v = self.fourier_l1
        return float(v() if callable(v) else v)


def unitary_phase_function(G: SwitchFunction) -> SmoothFunction:
    def f(lam):
        lam = np.asarray(lam, dtype=float)
        out = np.exp(1j * np.pi * (G(lam) + 1))
        out[np.abs(lam) >= G.g / 2] = 1.0
        return out
    return SmoothFunction(f, G.unitary_fourier_l1)


def switch_as_smooth(G: SwitchFunction) -> SmoothFunction:
    return SmoothFunction(G, G.fourier_l1)


def potential_unitary(H: Any, G: SwitchFunction, model: LatticeModel | None = None) -> GeneralOperator:
    """``U = exp(i pi (G(H) + 1))``, exactly the identity where ``|H| >= g/2``."""
    U = apply_function(H, unitary_phase_function(G), model=model, hermitian_output=False)
    U.tags["symbol"] = "U"
    return U


def bounded_transform(A: Any) -> GeneralOperator:
    """``F(A) = A (1 + A* A)^{-1/2}``."""
    M = as_matrix(A)
    herm = isinstance(A, HermitianOperator)
    if sp.issparse(M):
        off = M - sp.diags(M.diagonal())
        if off.count_nonzero() == 0:
            d = M.diagonal()
            out = sp.diags(d / np.sqrt(1 + np.abs(d) ** 2), format="csr")
            return HermitianOperator(out) if herm else GeneralOperator(out)
        M = M.toarray()
    M = np.asarray(M, dtype=complex)
    if herm:
        w, V = eigh(M)
        out = (V * (w / np.sqrt(1 + w**2))) @ V.conj().T
        return HermitianOperator((out + out.conj().T) / 2, tol=1e-9)
    W, s, Vh = np.linalg.svd(M, full_matrices=False)
    return GeneralOperator((W * (s / np.sqrt(1 + s**2))) @ Vh)


@dataclass(frozen=True)
class InvertibilityCertificate:
    g_est: float
    mask: np.ndarray = field(repr=False)
    collar: int
    passed: bool


def _enlarge(model: LatticeModel, mask: np.ndarray, collar: int) -> np.ndarray:
    if collar <= 0 or not mask.any():
        return mask.copy()
    return model.distances_to(mask) <= collar


def check_asymptotic_invertibility(H: Any, model: LatticeModel, mask: Any = None,
                                   collar: int = 0) -> InvertibilityCertificate:
    """Gap of H away from a compact site set.

    ``g_est`` is the square root of the smallest eigenvalue of ``H^2``
    compressed to the sites farther than ``collar`` from ``mask``.  H may
    act on the model space tensored (outermost) with C^r.
    """
    M = as_matrix(H)
    m = model.site_mask(mask)
    if m.all():
        raise ValueError("mask covers all sites; nothing to certify")
    big = _enlarge(model, m, int(collar))
    if big.all():
        raise ValueError("collar-enlarged mask covers all sites; nothing to certify")
    labels = site_labels(model, M.shape[0])
    keep = ~big[labels]
    H2 = M @ M
    H2c = H2[keep][:, keep] if sp.issparse(H2) else H2[np.ix_(keep, keep)]
    blocks = _site_blocks(H2c, labels[keep])
    if blocks is not None:
        _, w, _ = _blockwise_eig(H2c, blocks)
        lo = float(w.min())
    else:
        lo = float(sla.eigvalsh(to_dense(H2c), subset_by_index=[0, 0], check_finite=False)[0])
    g = float(np.sqrt(max(lo, 0.0)))
    return InvertibilityCertificate(g_est=g, mask=m, collar=int(collar), passed=g > 0)


def locality_profile(A: Any, model: LatticeModel, mask: Any) -> dict[int, float]:
    """Largest entry magnitude of A in rows or columns at each site distance from ``mask``."""
    M = as_matrix(A)
    m = model.site_mask(mask)
    if not m.any():
        raise ValueError("locality profile needs a nonempty mask")
    dist = model.distances_to(m)
    labels = site_labels(model, M.shape[0])
    d = dist[labels]
    absM = abs(M).tocsr() if sp.issparse(M) else np.abs(M)
    if sp.issparse(absM):
        row_max = absM.max(axis=1).toarray().ravel()
        col_max = absM.max(axis=0).toarray().ravel()
    else:
        row_max = absM.max(axis=1) if absM.size else np.zeros(M.shape[0])
        col_max = absM.max(axis=0) if absM.size else np.zeros(M.shape[1])
    both = np.maximum(row_max, col_max)
    return {int(k): float(both[d == k].max()) for k in np.unique(d)}


def commutator_transfer_bound(D: Any, H: Any, f: SmoothFunction | SwitchFunction) -> tuple[float, float]:
    """Return ``(||[D, f(H)]||, ||F f'||_1 ||[D, H]||)``."""
    if isinstance(f, SwitchFunction):
        f = switch_as_smooth(f)
    norm = f.fourier_l1_of_derivative
    if not np.isfinite(norm):
        raise ArithmeticError("Fourier norm of f' diverges")
    fH = apply_function(H, f.f, hermitian_output=False)
    lhs = commutator_norm(D, fH)
    rhs = norm * commutator_norm(D, H)
    return lhs, rhs
