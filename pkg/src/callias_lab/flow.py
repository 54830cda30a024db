"""Spectral flow of finite-dimensional Hermitian paths."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .calculus import SwitchFunction, eigh
from .operators import TraceWeights, to_dense, weighted_trace

WINDING_NORMALIZATION = -2 * np.pi
PROJECTION_TOL = 1e-10
RANK_TOL = 1e-8
EVALUATION_BUDGET = 2**14


class RefinementBudgetExceeded(RuntimeError):
    pass


class EndpointNotInvertible(ValueError):
    pass


def _smallest_abs_eig(A: np.ndarray) -> float:
    w = np.linalg.eigvalsh(A)
    return float(np.abs(w).min()) if w.size else np.inf


@dataclass
class OperatorPath:
    """A path ``t -> T_t`` on [0, 1] with invertible endpoints."""

    evaluator: Callable[[float], Any]
    initial_samples: int = 9
    endpoint_gap: float | None = None

    def __post_init__(self):
        if self.initial_samples < 2:
            raise ValueError("initial_samples must be at least 2")
        g0 = _smallest_abs_eig(self(0.0))
        g1 = _smallest_abs_eig(self(1.0))
        gap = min(g0, g1)
        if self.endpoint_gap is None:
            self.endpoint_gap = gap
        if not self.endpoint_gap > 0 or gap < self.endpoint_gap * (1 - 1e-12):
            raise EndpointNotInvertible(
                f"endpoint smallest |eigenvalue| {gap:.3e} below endpoint_gap {self.endpoint_gap}")

    def __call__(self, t: float) -> np.ndarray:
        return to_dense(self.evaluator(float(t)))


@dataclass
class FlowReport:
    flow: int
    crossings: list = field(default_factory=list)
    refinements: int = 0
    method: str = "crossings"
    raw: complex | None = None
    residual: float = 0.0


def _check_projection(P: np.ndarray, name: str):
    if np.abs(P @ P - P).max(initial=0.0) > PROJECTION_TOL:
        raise ValueError(f"{name} is not idempotent")


def _range_basis(P: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((P + P.conj().T) / 2)
    return V[:, w > 0.5]


def _intersection_dim(B: np.ndarray, P: np.ndarray) -> int:
    """dim(ran B  cap  ker P) for an orthonormal frame B."""
    if B.shape[1] == 0:
        return 0
    s = np.linalg.svd(P @ B, compute_uv=False)
    full = np.zeros(B.shape[1])
    full[: s.size] = s
    return int((full < RANK_TOL).sum())


def essential_codimension(P: Any, Q: Any) -> int:
    """``dim(ran Q cap ker P) - dim(ran P cap ker Q)``."""
    P, Q = to_dense(P), to_dense(Q)
    _check_projection(P, "P")
    _check_projection(Q, "Q")
    BQ, BP = _range_basis(Q), _range_basis(P)
    ec = _intersection_dim(BQ, P) - _intersection_dim(BP, Q)
    rank_diff = BQ.shape[1] - BP.shape[1]
    if ec != rank_diff:
        raise ArithmeticError(f"essential codimension {ec} differs from rank difference {rank_diff}")
    return ec


def nonnegative_projection(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, V = np.linalg.eigh(A)
    B = V[:, w >= 0]
    return B @ B.conj().T, w


def spectral_flow(path: OperatorPath, method: str = "crossings", ec: Callable | None = None,
                  budget: int = EVALUATION_BUDGET, kind: str = "erf_based", tol: float = 1e-8) -> FlowReport:
    if method == "crossings":
        return _flow_crossings(path, ec or essential_codimension, budget)
    if method == "winding":
        return _flow_winding(path, budget, kind, tol)
    raise ValueError(f"unknown spectral flow method {method!r}")


def _flow_crossings(path: OperatorPath, ec: Callable, budget: int) -> FlowReport:
    zero_tol = 1e-12 * max(1.0, path.endpoint_gap)
    cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}
    evals = 0

    def at(t):
        nonlocal evals
        if t not in cache:
            evals += 1
            if evals > budget:
                raise RefinementBudgetExceeded(f"spectral flow refinement used more than {budget} evaluations")
            cache[t] = nonnegative_projection(path(t))
        return cache[t]

    def nudge(a, b, t):
        if np.abs(at(t)[1]).min() > zero_tol:
            return t
        # exact zero at an interior sample: bisect once more to either side
        for cand in (0.5 * (a + t), 0.5 * (t + b)):
            if np.abs(at(cand)[1]).min() > zero_tol:
                return cand
        return t

    ts = list(np.linspace(0.0, 1.0, path.initial_samples))
    ts = [ts[0]] + [nudge(ts[i - 1], ts[i + 1], ts[i]) for i in range(1, len(ts) - 1)] + [ts[-1]]
    stack = [(ts[i], ts[i + 1]) for i in range(len(ts) - 1)][::-1]
    accepted = []
    refinements = 0
    while stack:
        a, b = stack.pop()
        wa, wb = at(a)[1], at(b)[1]
        motion = float(np.abs(np.sort(wb) - np.sort(wa)).max())
        near = min(np.abs(wa).min(), np.abs(wb).min())
        if motion < 0.5 * near:
            # certified crossing-free: contributes zero by triviality
            if (wa < 0).sum() != (wb < 0).sum():
                accepted.append((a, b))
            continue
        if (b - a) < 1e-9:
            accepted.append((a, b))
            continue
        refinements += 1
        mid = nudge(a, b, 0.5 * (a + b))
        stack.append((mid, b))
        stack.append((a, mid))
    accepted.sort()
    total = 0
    crossings = []
    for a, b in accepted:
        e = ec(at(a)[0], at(b)[0])
        if e:
            crossings.append(((a, b), int(e)))
        total += e
    return FlowReport(int(total), crossings, refinements, "crossings")


def _unitary_and_derivative(path: OperatorPath, G: SwitchFunction, t: float, h: float = 1e-6):
    """U_t = exp(i pi (G(T_t) + 1)) and dU/dt by the Daleckii-Krein formula."""
    T = path(t)
    w, V = eigh(T)
    phase = np.exp(1j * np.pi * (G(w) + 1))
    U = (V * phase) @ V.conj().T
    lo, hi = max(0.0, t - h), min(1.0, t + h)
    dT = (path(hi) - path(lo)) / (hi - lo)
    dphase = 1j * np.pi * G.derivative(w) * phase
    diff = w[:, None] - w[None, :]
    close = np.abs(diff) < 1e-10
    num = phase[:, None] - phase[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        L = np.where(close, 0.5 * (dphase[:, None] + dphase[None, :]), num / np.where(close, 1.0, diff))
    dU = V @ (L * (V.conj().T @ dT @ V)) @ V.conj().T
    return U, dU


def _adaptive_gauss(fun: Callable[[float], complex], a: float, b: float, tol: float, budget: int,
                    breaks: list[float] | None = None):
    """Composite Gauss-Legendre (10 vs 20 nodes per panel, bisect on disagreement)."""
    x10, w10 = np.polynomial.legendre.leggauss(10)
    x20, w20 = np.polynomial.legendre.leggauss(20)
    evals = 0

    def panel(lo, hi):
        nonlocal evals
        c, r = 0.5 * (lo + hi), 0.5 * (hi - lo)
        evals += 30
        s10 = r * sum(wi * fun(c + r * xi) for xi, wi in zip(x10, w10))
        s20 = r * sum(wi * fun(c + r * xi) for xi, wi in zip(x20, w20))
        return s10, s20

    total = 0.0 + 0.0j
    worst = 0.0
    pts = breaks if breaks is not None else [a, b]
    stack = [(pts[i], pts[i + 1]) for i in range(len(pts) - 1)][::-1]
    while stack:
        lo, hi = stack.pop()
        s10, s20 = panel(lo, hi)
        err = abs(s20 - s10)
        if err <= tol * (hi - lo) or hi - lo < 1e-7:
            total += s20
            worst = max(worst, err)
            continue
        if evals > budget:
            raise ArithmeticError("winding quadrature did not converge (two-rule disagreement above tolerance)")
        mid = 0.5 * (lo + hi)
        stack.extend([(mid, hi), (lo, mid)])
    return total, worst, evals


def _panel_breaks(path: OperatorPath, width: float, budget: int, window: float = np.inf) -> list[float]:
    """Partition [0, 1] so no eigenvalue near ``[-window, window]`` moves more than ``width`` in a panel.

    Without it both Gauss rules can step over a brief passage through the switch window
    and agree on a wrong panel value.
    """
    ts = list(np.linspace(0.0, 1.0, path.initial_samples))
    spec = {t: np.linalg.eigvalsh(path(t)) for t in ts}
    out = [0.0]
    stack = [(ts[i], ts[i + 1]) for i in range(len(ts) - 1)][::-1]
    while stack:
        a, b = stack.pop()
        move = np.abs(spec[b] - spec[a])
        # eigenvalues that cannot reach the switch window contribute no phase
        near = np.minimum(np.abs(spec[a]), np.abs(spec[b])) < window + move
        if move[near].max(initial=0.0) < width or b - a < 1e-9:
            out.append(b)
            continue
        if len(spec) > budget:
            raise RefinementBudgetExceeded(f"winding panel partition used more than {budget} evaluations")
        m = 0.5 * (a + b)
        spec[m] = np.linalg.eigvalsh(path(m))
        stack.extend([(m, b), (a, m)])
    return out


def _flow_winding(path: OperatorPath, budget: int, kind: str, tol: float) -> FlowReport:
    G = SwitchFunction(kind, path.endpoint_gap)
    breaks = _panel_breaks(path, 0.25 * G.g, budget, G.g)

    def integrand(t):
        U, dU = _unitary_and_derivative(path, G, t)
        n = U.shape[0]
        return 1j * np.trace((U.conj().T - np.eye(n)) @ dU)

    raw, err, evals = _adaptive_gauss(integrand, 0.0, 1.0, tol, 20 * budget, breaks)
    val = raw / WINDING_NORMALIZATION
    flow = int(np.rint(val.real))
    return FlowReport(flow, [], evals, "winding", raw, float(abs(val - flow)))


def straight_line_flow(T0: Any, T1: Any, method: str = "crossings") -> int:
    A0, A1 = to_dense(T0), to_dense(T1)
    path = OperatorPath(lambda t: (1 - t) * A0 + t * A1, initial_samples=9)
    return spectral_flow(path, method).flow


def index_via_mass_flip(T: Any, m: float = 1.0, method: str = "crossings") -> int:
    """Index of T as the flow from ``[[-m, T*], [T, m]]`` to ``[[m, T*], [T, -m]]``."""
    if not m > 0:
        raise ValueError("m must be positive")
    M = to_dense(T)
    r, c = M.shape
    Ic, Ir = np.eye(c), np.eye(r)
    A0 = np.block([[-m * Ic, M.conj().T], [M, m * Ir]])
    A1 = np.block([[m * Ic, M.conj().T], [M, -m * Ir]])
    return straight_line_flow(A0, A1, method)


def winding_cocycle(f1: Callable[[float], Any], f2: Callable[[float], Any], weights: TraceWeights | None = None,
                    f2_prime: Callable[[float], Any] | None = None, tol: float = 1e-9,
                    budget: int = 200000, h: float = 1e-5) -> complex:
    """``i int_0^1 tr(f1(t) f2'(t)) dt``; ``f2'`` by central differences unless supplied."""
    def deriv(t):
        if f2_prime is not None:
            return to_dense(f2_prime(t))
        lo, hi = t - h, t + h
        return (to_dense(f2(hi)) - to_dense(f2(lo))) / (hi - lo)

    def integrand(t):
        A = to_dense(f1(t)) @ deriv(t)
        if weights is None:
            return 1j * np.trace(A)
        return 1j * weighted_trace(A, weights)

    raw, _, _ = _adaptive_gauss(integrand, 0.0, 1.0, tol, budget)
    return complex(raw)


def normalized_winding(raw: complex) -> float:
    return float((raw / WINDING_NORMALIZATION).real)
