"""Finite lattice models: geometry, Dirac operators, magnetic shifts and traces.

Operators are stored either as dense numpy arrays or as scipy CSR matrices.
Site ordering is lexicographic in the coordinates (first axis slowest) with
the fiber index running fastest, so that the Hilbert-space index of
``(site, fiber)`` is ``site * fiber_dim + fiber``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp

HERMITIAN_TOL = 1e-12

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def as_matrix(A: Any):
    """Return the underlying array (dense or sparse) of an operator-like input."""
    if isinstance(A, GeneralOperator):
        return A.matrix
    if sp.issparse(A):
        return A.tocsr()
    return np.asarray(A)


def to_dense(A: Any) -> np.ndarray:
    M = as_matrix(A)
    if sp.issparse(M):
        return M.toarray()
    return np.asarray(M)


def _fro(M) -> float:
    if sp.issparse(M):
        return float(np.sqrt((abs(M).power(2)).sum()))
    return float(np.linalg.norm(M))


class GeneralOperator:
    """A possibly rectangular complex matrix."""

    def __init__(self, matrix: Any, tags: dict | None = None):
        M = as_matrix(matrix)
        if sp.issparse(M):
            M = M.astype(complex).tocsr()
        else:
            M = np.asarray(M, dtype=complex)
            if M.ndim != 2:
                raise ValueError(f"operator must be a 2-d array, got shape {M.shape}")
        self.matrix = M
        self.tags = dict(tags or {})

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def row_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def col_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return to_dense(self.matrix)

    def adjoint(self) -> "GeneralOperator":
        return GeneralOperator(self.matrix.conj().T, self.tags)

    def __repr__(self) -> str:
        kind = "sparse" if self.is_sparse else "dense"
        return f"{type(self).__name__}({self.row_dim}x{self.col_dim}, {kind})"


class HermitianOperator(GeneralOperator):
    """Square matrix certified Hermitian at construction.

    The certificate is ``||A - A*||_F <= tol * max(1, ||A||_F)``.
    """

    def __init__(self, matrix: Any, tags: dict | None = None, tol: float = HERMITIAN_TOL):
        super().__init__(matrix, tags)
        n, m = self.matrix.shape
        if n != m:
            raise ValueError(f"Hermitian operator must be square, got {n}x{m}")
        M = self.matrix
        defect = _fro(M - M.conj().T)
        scale = max(1.0, _fro(M))
        if defect > tol * scale:
            raise ValueError(f"matrix is not Hermitian: ||A-A*||_F = {defect:.3e}")
        self.hermiticity_defect = defect

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def adjoint(self) -> "HermitianOperator":
        return self


@dataclass(frozen=True)
class TraceWeights:
    """Weights defining a finite model of a semifinite trace.

    Without ``basis`` the trace is ``sum_k w_k A_kk``.  With a basis matrix
    ``B`` (columns ``b_k``) it is ``sum_k w_k <b_k, A b_k>``, which models
    traces that are not diagonal in the site basis, for instance the trace
    per unit length of a translation-covariant operator.
    """

    weights: np.ndarray
    basis: Any = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if np.any(w < 0):
            raise ValueError("trace weights must be nonnegative")
        object.__setattr__(self, "weights", w)
        if self.basis is not None:
            B = as_matrix(self.basis)
            if B.shape[1] != w.size:
                raise ValueError("basis column count must equal the number of weights")
            object.__setattr__(self, "basis", B)

    @classmethod
    def uniform(cls, dim: int, value: float = 1.0) -> "TraceWeights":
        return cls(np.full(dim, float(value)))

    @property
    def dim(self) -> int:
        if self.basis is None:
            return self.weights.size
        return self.basis.shape[0]


@dataclass(frozen=True)
class LatticeModel:
    """Geometry of a finite 1d or 2d lattice with an internal fiber."""

    dim: int
    extent: tuple[int, ...]
    fiber_dim: int = 1
    boundary: str = "open"
    spacing: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        ext = tuple(int(e) for e in np.atleast_1d(self.extent))
        if len(ext) != self.dim:
            raise ValueError(f"need {self.dim} extents, got {len(ext)}")
        if any(e <= 0 for e in ext):
            raise ValueError(f"extents must be positive, got {ext}")
        if any(e < 3 for e in ext):
            raise ValueError(f"extent below minimum of 3: {ext}")
        if int(self.fiber_dim) < 1:
            raise ValueError("fiber_dim must be at least 1")
        if self.boundary not in ("open", "periodic"):
            raise ValueError(f"boundary must be 'open' or 'periodic', got {self.boundary!r}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "extent", ext)
        object.__setattr__(self, "fiber_dim", int(self.fiber_dim))
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.extent))

    @property
    def hilbert_dim(self) -> int:
        return self.n_sites * self.fiber_dim

    def axis_coordinates(self, axis: int) -> np.ndarray:
        n = self.extent[axis]
        return (np.arange(n) - (n - 1) / 2.0) * self.spacing

    def site_indices(self) -> np.ndarray:
        """Integer lattice indices of all sites, shape (n_sites, dim)."""
        grids = np.meshgrid(*[np.arange(n) for n in self.extent], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def site_coordinates(self) -> np.ndarray:
        """Centered coordinates of all sites, shape (n_sites, dim)."""
        idx = self.site_indices().astype(float)
        centers = np.array([(n - 1) / 2.0 for n in self.extent])
        return (idx - centers) * self.spacing

    def expand(self, site_values: np.ndarray) -> np.ndarray:
        """Repeat per-site values over the fiber (Hilbert-space ordering)."""
        return np.repeat(np.asarray(site_values), self.fiber_dim)

    def site_mask(self, mask: Any) -> np.ndarray:
        """Normalize a site subset (boolean array or index list) to a boolean mask."""
        if mask is None:
            return np.zeros(self.n_sites, dtype=bool)
        arr = np.asarray(mask)
        if arr.dtype == bool:
            if arr.size != self.n_sites:
                raise ValueError(f"mask length {arr.size} != number of sites {self.n_sites}")
            return arr.ravel().copy()
        out = np.zeros(self.n_sites, dtype=bool)
        if arr.size:
            if arr.min() < 0 or arr.max() >= self.n_sites:
                raise ValueError("mask indices outside the lattice")
            out[arr.astype(int).ravel()] = True
        return out

    def distances_to(self, mask: np.ndarray) -> np.ndarray:
        """Lattice (Chebyshev, in sites) distance of every site to a site subset."""
        mask = self.site_mask(mask)
        if not mask.any():
            raise ValueError("distance to an empty set is undefined")
        idx = self.site_indices()
        src = idx[mask]
        d = np.zeros((idx.shape[0], src.shape[0]))
        for ax in range(self.dim):
            diff = np.abs(idx[:, ax][:, None] - src[:, ax][None, :])
            if self.boundary == "periodic":
                diff = np.minimum(diff, self.extent[ax] - diff)
            d = np.maximum(d, diff)
        return d.min(axis=1).astype(int)


def build_lattice(dim: int, extent, fiber_dim: int = 1, boundary: str = "open",
                  spacing: float = 1.0) -> LatticeModel:
    return LatticeModel(dim=dim, extent=tuple(np.atleast_1d(extent)), fiber_dim=fiber_dim,
                        boundary=boundary, spacing=spacing)


def _shift_1d(n: int, periodic: bool) -> sp.csr_matrix:
    """Forward shift e_j -> e_{j+1} on n sites."""
    rows = np.arange(1, n)
    cols = np.arange(0, n - 1)
    if periodic:
        rows = np.append(rows, 0)
        cols = np.append(cols, n - 1)
    return sp.csr_matrix((np.ones(rows.size, dtype=complex), (rows, cols)), shape=(n, n))


def _axis_operator(model: LatticeModel, axis: int, op1d) -> sp.csr_matrix:
    """Embed a one-axis operator into the site space (no fiber)."""
    mats = [sp.identity(n, dtype=complex, format="csr") for n in model.extent]
    mats[axis] = sp.csr_matrix(op1d)
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def _with_fiber(model: LatticeModel, site_op, fiber_op=None) -> sp.csr_matrix:
    if fiber_op is None:
        fiber_op = np.eye(model.fiber_dim)
    return sp.kron(site_op, sp.csr_matrix(fiber_op), format="csr")


def central_difference(model: LatticeModel, axis: int) -> sp.csr_matrix:
    """Site-space central difference for -i d/dx along one axis."""
    n = model.extent[axis]
    S = _shift_1d(n, model.boundary == "periodic")
    # (S^T f)_j = f_{j+1}
    d = (-0.5j / model.spacing) * (S.T - S)
    return _axis_operator(model, axis, d)


def lattice_laplacian(model: LatticeModel) -> sp.csr_matrix:
    """Nonnegative discrete Laplacian (-Delta) on the site space."""
    periodic = model.boundary == "periodic"
    out = sp.csr_matrix((model.n_sites, model.n_sites), dtype=complex)
    for ax, n in enumerate(model.extent):
        S = _shift_1d(n, periodic)
        lap = (2 * sp.identity(n) - S - S.T) / model.spacing**2
        out = out + _axis_operator(model, ax, lap)
    return out.real.tocsr()


def position_operator(model: LatticeModel, axis: int) -> HermitianOperator:
    if not 0 <= axis < model.dim:
        raise ValueError(f"axis {axis} out of range for a {model.dim}d model")
    x = model.site_coordinates()[:, axis]
    X = sp.diags(model.expand(x).astype(complex), format="csr")
    return HermitianOperator(X, tags={"symbol": f"X{axis + 1}"})


def dirac_operator(model: LatticeModel, mode: str = "derivative_1d", axis: int | None = None):
    """Return ``(D, grading)``; the grading is None unless ``mode == 'dirac_2d'``.

    ``derivative_1d`` needs a 1d model.  ``dirac_2d`` needs a 2d model whose
    fiber is (spinor) x (internal) with the spinor factor slowest inside the
    fiber, i.e. fiber = C^2 (x) C^(fiber_dim/2).
    """
    if mode == "derivative_1d":
        if model.dim != 1:
            raise ValueError("derivative_1d requires a 1d model")
        D = _with_fiber(model, central_difference(model, 0))
        return HermitianOperator(D, tags={"symbol": "D", "mode": mode}), None
    if mode == "dirac_2d":
        if model.dim != 2:
            raise ValueError("dirac_2d requires a 2d model")
        if model.fiber_dim % 2:
            raise ValueError("dirac_2d requires an even fiber dimension")
        inner = np.eye(model.fiber_dim // 2)
        D1 = central_difference(model, 0)
        D2 = central_difference(model, 1)
        D = (sp.kron(D1, np.kron(SIGMA_X, inner)) + sp.kron(D2, np.kron(SIGMA_Y, inner))).tocsr()
        gamma = sp.kron(sp.identity(model.n_sites), np.kron(SIGMA_Z, inner), format="csr")
        return (HermitianOperator(D, tags={"symbol": "D", "mode": mode}),
                HermitianOperator(gamma, tags={"symbol": "gamma"}))
    if mode == "position":
        ax = model.dim - 1 if axis is None else axis
        return position_operator(model, ax), None
    raise ValueError(f"unknown Dirac mode {mode!r}")


def chiral_block(model: LatticeModel) -> sp.csr_matrix:
    """The block D_0 of a ``dirac_2d`` operator, mapping the gamma=+1 part to gamma=-1.

    Acts on site space (x) internal fiber, i.e. the spinor factor removed.
    """
    if model.dim != 2 or model.fiber_dim % 2:
        raise ValueError("chiral_block requires a 2d model with even fiber")
    inner = sp.identity(model.fiber_dim // 2, format="csr")
    D0 = central_difference(model, 0) + 1j * central_difference(model, 1)
    return sp.kron(D0, inner, format="csr")


def magnetic_shifts(model: LatticeModel, theta: float):
    """Magnetic translations in Landau gauge, ``v1 v2 = e^{i theta} v2 v1``.

    ``v1`` translates along the first axis, ``v2`` along the second one and
    carries the phase ``e^{-i theta a}`` where ``a`` is the first-axis index.
    On open models wrap-around hoppings are removed.
    """
    if model.dim != 2:
        raise ValueError("magnetic shifts need a 2d model")
    n1, n2 = model.extent
    periodic = model.boundary == "periodic"
    if periodic:
        q = _flux_denominator(theta)
        if q is None:
            raise ValueError(f"flux theta={theta} is not a rational multiple of 2*pi")
        if n1 % q or n2 % q:
            raise ValueError(f"extents {model.extent} must be divisible by flux denominator {q}")
    S1 = _axis_operator(model, 0, _shift_1d(n1, periodic))
    S2 = _axis_operator(model, 1, _shift_1d(n2, periodic))
    a = model.site_indices()[:, 0]
    phase = sp.diags(np.exp(-1j * theta * a), format="csr")
    v1 = _with_fiber(model, S1)
    v2 = _with_fiber(model, (phase @ S2).tocsr())
    return GeneralOperator(v1, {"symbol": "v1"}), GeneralOperator(v2, {"symbol": "v2"})


def _flux_denominator(theta: float, max_q: int = 64) -> int | None:
    r = theta / (2 * np.pi)
    for q in range(1, max_q + 1):
        if abs(r * q - round(r * q)) < 1e-10:
            return q
    return None


def weighted_trace(A: Any, w: TraceWeights) -> complex:
    M = as_matrix(A)
    if M.shape[0] != M.shape[1]:
        raise ValueError("weighted trace needs a square operator")
    if w.dim != M.shape[0]:
        raise ValueError(f"weights of dimension {w.dim} do not match operator of dimension {M.shape[0]}")
    if w.basis is None:
        diag = M.diagonal() if sp.issparse(M) else np.diagonal(M)
        return complex(np.dot(w.weights, diag))
    B = w.basis
    AB = M @ B
    vals = np.asarray((B.conj().multiply(AB)).sum(axis=0) if sp.issparse(AB) else
                      np.einsum("ij,ij->j", np.conj(to_dense(B)), to_dense(AB))).ravel()
    return complex(np.dot(w.weights, vals))


def zero_momentum_weights(model: LatticeModel) -> TraceWeights:
    """Trace of the fiber symbol at zero momentum: ``h * sum_{n,m} tr A_{nm}``.

    For a translation-covariant 1d model this is the continuum trace of the
    operator per fiber, and the only finite-volume trace that sees the
    commutator with the derivative.
    """
    f = model.fiber_dim
    ones = np.ones((model.n_sites, 1))
    B = np.kron(ones, np.eye(f))
    return TraceWeights(np.full(f, model.spacing ** model.dim), basis=B)


def commutator_norm(D: Any, H: Any) -> float:
    """Operator norm of ``DH - HD``."""
    Dm, Hm = as_matrix(D), as_matrix(H)
    if Dm.shape != Hm.shape:
        raise ValueError(f"dimension mismatch {Dm.shape} vs {Hm.shape}")
    C = Dm @ Hm - Hm @ Dm
    return operator_norm(C)


def operator_norm(A: Any) -> float:
    M = as_matrix(A)
    if sp.issparse(M):
        if M.nnz == 0:
            return 0.0
        if min(M.shape) <= 400:
            return float(np.linalg.norm(M.toarray(), 2))
        from scipy.sparse.linalg import ArpackNoConvergence, svds
        try:
            return float(svds(M, k=1, return_singular_vectors=False)[0])
        except ArpackNoConvergence:
            # clustered top singular values; fall back to a dense SVD when affordable
            if min(M.shape) > 4000:
                raise
            return float(np.linalg.norm(M.toarray(), 2))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


@dataclass(frozen=True)
class PositionDerivation:
    """Commutator with a position operator, using minimal-image displacements on periodic axes.

    On a torus X itself is discontinuous at the seam, but ``[X, A]`` is well
    defined for local A through ``([X, A])_{xy} = (x - y) A_{xy}``.
    """

    model: LatticeModel
    axis: int
    _disp: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        idx = self.model.site_indices()[:, self.axis]
        d = (idx[:, None] - idx[None, :]).astype(float)
        if self.model.boundary == "periodic":
            n = self.model.extent[self.axis]
            d = (d + n // 2) % n - n // 2
        d *= self.model.spacing
        f = self.model.fiber_dim
        if f > 1:
            d = np.kron(d, np.ones((f, f)))
        object.__setattr__(self, "_disp", d)

    def commutator(self, A: Any) -> np.ndarray:
        return self._disp * to_dense(A)


def commutator(D: Any, A: Any):
    """``[D, A]`` for a Hermitian operator or a :class:`PositionDerivation`."""
    if isinstance(D, PositionDerivation):
        return D.commutator(A)
    Dm, Am = as_matrix(D), as_matrix(A)
    return Dm @ Am - Am @ Dm
