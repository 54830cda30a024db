"""Scenario catalog: lattice families with known index, one report per run."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .calculus import (SWITCH_KINDS, SwitchFunction, apply_function, bounded_transform,
                       check_asymptotic_invertibility, commutator_transfer_bound, eigh,
                       locality_profile, potential_unitary, unitary_phase_function)
from .flow import (WINDING_NORMALIZATION, OperatorPath, essential_codimension, index_via_mass_flip,
                   spectral_flow)
from .localizer import (KERNEL_ORIENTATION, CalliasSetup, Window, even_callias_operator,
                        even_decomposition_residual, kappa0, kernel_count_index, phase_space_window,
                        signature_index_odd)
from .operators import (HermitianOperator, LatticeModel, PositionDerivation, TraceWeights, build_lattice,
                        commutator_norm, dirac_operator, magnetic_shifts, zero_momentum_weights)
from .pairings import (POSITION_WINDING_NORMALIZATION, boundary_invariant, cell_weights, chern_number,
                       chiral_projection, edge_sites, even_pairing, fermi_projection, nc_winding,
                       odd_index_pairing, site_local_chiral_unitary, support_leak)

EXPERIMENTS = ("robbin_salamon", "harmonic_unbounded", "even_vortex", "nc_torus_interface",
               "bounded_transform_check")

DESCRIPTIONS = {
    "robbin_salamon": "1d path potential with k designed eigenvalue crossings (k in -f..f); "
                      "signature index, crossing flow, winding trace and odd pairing",
    "harmonic_unbounded": "H(x) = x on a fine 1d lattice; interior-filtered kernel count for several kappa",
    "even_vortex": "2d Dirac operator with vortex potential (x1 + i x2)^w; even kernel count, "
                   "even localizer pairing and boundary loop winding",
    "nc_torus_interface": "Harper model at rational flux glued to a trivial insulator on a torus; "
                          "interface pairing against the Chern number difference",
    "bounded_transform_check": "index of H and F(H) = H (1 + H^2)^(-1/2) on the harmonic and vortex families",
}


class ConfigError(ValueError):
    """Invalid experiment configuration (message carries the offending key path)."""


# ---------------------------------------------------------------------------
# configuration and report

@dataclass
class ExperimentConfig:
    name: str
    lattice: dict = field(default_factory=dict)
    kappa: float | None = None
    kappa_values: list | None = None
    switch: str = "erf_based"
    g: float | None = None
    m: float = 1.0
    mu: float = 0.0
    flux: tuple = (1, 3)
    crossings: int = 1
    winding: int = 1
    window_radius: float | None = None
    momentum_radius: float | None = None
    seed: int = 0
    sweep_points: int = 0
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ConfigError(f"name: unknown experiment {self.name!r}; expected one of {EXPERIMENTS}")
        if self.switch not in SWITCH_KINDS:
            raise ConfigError(f"switch: unknown kind {self.switch!r}; expected one of {SWITCH_KINDS}")
        if self.kappa is not None and not self.kappa > 0:
            raise ConfigError("kappa: must be positive")
        if self.kappa_values is not None:
            self.kappa_values = [float(k) for k in self.kappa_values]
            if not self.kappa_values or any(not k > 0 for k in self.kappa_values):
                raise ConfigError("kappa_values: must be a nonempty list of positive numbers")
        if self.g is not None and not self.g > 0:
            raise ConfigError("g: must be positive")
        if not self.m > 0:
            raise ConfigError("m: must be positive")
        if self.mu < 0:
            raise ConfigError("mu: must be nonnegative")
        self.flux = tuple(int(v) for v in self.flux)
        if len(self.flux) != 2 or self.flux[1] < 1:
            raise ConfigError("flux: must be a pair [p, q] with q >= 1")
        if self.sweep_points < 0:
            raise ConfigError("sweep_points: must be nonnegative")
        if self.name == "robbin_salamon":
            f = int(self.lattice.get("fiber_dim", 4))
            if abs(self.crossings) > f:
                raise ConfigError(f"crossings: |k| = {abs(self.crossings)} exceeds fiber dimension {f}")
        if self.name in ("even_vortex",) and abs(self.winding) > 3:
            raise ConfigError("winding: supported range is -3..3")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flux"] = list(self.flux)
        return d


@dataclass
class IndexReport:
    experiment: str
    kappa: float | None = None
    window_radius: float | None = None
    index_signature: int | None = None
    index_kernel: int | None = None
    spectral_flow: int | None = None
    nc_winding: int | None = None
    pairing: int | None = None
    chern_diff: int | None = None
    boundary: int | None = None
    g_est: float | None = None
    kappa0: float | None = None
    gap: float | None = None
    agreement: bool = False
    runtime_ms: float = 0.0
    expected: int | None = None
    calibration: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    ENGINE_FIELDS = ("index_signature", "index_kernel", "spectral_flow", "nc_winding", "pairing",
                     "chern_diff", "boundary")

    def engines(self) -> dict:
        return {k: getattr(self, k) for k in self.ENGINE_FIELDS if getattr(self, k) is not None}

    def to_dict(self) -> dict:
        return _jsonable({f.name: getattr(self, f.name) for f in fields(self)})


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(np.real(x)), "im": float(np.imag(x))}
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _finish(rep: IndexReport, t0: float, extra_ok: bool = True) -> IndexReport:
    vals = list(rep.engines().values())
    ok = bool(vals) and all(v == vals[0] for v in vals)
    if rep.expected is not None:
        ok = ok and vals[0] == rep.expected
    rep.agreement = bool(ok and extra_ok)
    rep.runtime_ms = (time.perf_counter() - t0) * 1e3
    return rep


# ---------------------------------------------------------------------------
# robbin_salamon

def _rotation_generator(f: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(f, f)) + 1j * rng.normal(size=(f, f))
    A = (A + A.conj().T) / 2
    return A / np.linalg.norm(A, 2)


def robbin_salamon_potential(model: LatticeModel, k: int, amplitude: float = 0.1, width: float = 25.0,
                             seed: int = 0, spread: float = 60.0, twist: float = 0.8,
                             twist_scale: float = 150.0):
    """``H(x) = R(x) diag(lambda(x)) R(x)*`` with ``|k|`` eigenvalues crossing zero.

    Crossing eigenvalues follow ``sign(k) a tanh((x - c_i) / width)`` with
    centers spread over ``[-spread, spread]``; the others sit at ``+-a``.
    ``R(x) = exp(i twist tanh(x / twist_scale) A)`` for a seeded Hermitian A.
    Returns the site-block-diagonal H (sparse), its blocks and the crossing centers.
    """
    f = model.fiber_dim
    if abs(k) > f:
        raise ValueError(f"|k| = {abs(k)} exceeds fiber dimension {f}")
    x = model.site_coordinates()[:, 0]
    centers = np.linspace(-spread, spread, abs(k)) if abs(k) > 1 else np.zeros(abs(k))
    lam = np.empty((x.size, f))
    lam[:] = amplitude * np.where(np.arange(f) % 2 == 0, 1.0, -1.0)
    for i, c in enumerate(centers):
        lam[:, i] = np.sign(k) * amplitude * np.tanh((x - c) / width)
    w, V = np.linalg.eigh(_rotation_generator(f, seed))
    th = twist * np.tanh(x / twist_scale)
    R = np.einsum("ij,nj,kj->nik", V, np.exp(1j * th[:, None] * w[None, :]), V.conj())
    blocks = np.einsum("nij,nj,nkj->nik", R, lam, R.conj())
    blocks = (blocks + np.conj(np.transpose(blocks, (0, 2, 1)))) / 2
    H = sp.block_diag(list(blocks), format="csr")
    return HermitianOperator(H), blocks, centers


def block_path(blocks: np.ndarray) -> OperatorPath:
    """Piecewise-linear path through site blocks ``H_0, ..., H_{N-1}`` on t in [0, 1]."""
    n = blocks.shape[0]

    def ev(t):
        s = t * (n - 1)
        i = min(int(np.floor(s)), n - 2)
        u = s - i
        return (1 - u) * blocks[i] + u * blocks[i + 1]

    return OperatorPath(ev, initial_samples=max(9, n // 4))


def _rs_parts(cfg: ExperimentConfig):
    lat = {"extent": 400, "fiber_dim": 4, "spacing": 1.0, **cfg.lattice}
    model = build_lattice(1, lat["extent"], lat["fiber_dim"], "open", lat["spacing"])
    a = float(cfg.tolerances.get("amplitude", 0.1))
    H, blocks, centers = robbin_salamon_potential(model, cfg.crossings, a, 25.0, cfg.seed)
    D, _ = dirac_operator(model, "derivative_1d")
    return model, a, H, blocks, centers, D


def _crossing_mask(model: LatticeModel, centers: np.ndarray, width: float = 75.0) -> np.ndarray:
    x = model.site_coordinates()[:, 0]
    m = np.zeros(model.n_sites, dtype=bool)
    for c in centers:
        m |= np.abs(x - c) <= width
    return m


def run_robbin_salamon(cfg: ExperimentConfig) -> IndexReport:
    t0 = time.perf_counter()
    model, a, H, blocks, centers, D = _rs_parts(cfg)
    g = cfg.g if cfg.g is not None else a
    cert = check_asymptotic_invertibility(H, model, _crossing_mask(model, centers))
    b = commutator_norm(D, H)
    k0 = kappa0("bounded", g, b)
    kappa = cfg.kappa if cfg.kappa is not None else 0.5 * k0
    G = SwitchFunction(cfg.switch, g)
    setup = CalliasSetup(D=D, kappa=kappa, cert=cert, H=H, mu=cfg.mu, switch=G, model=model)
    R = cfg.window_radius if cfg.window_radius is not None else 185.0
    P = cfg.momentum_radius if cfg.momentum_radius is not None else 1.3 / model.spacing
    W = phase_space_window(model, R, P)
    U = potential_unitary(H, G, model=model)
    sig = signature_index_odd(setup, window=W, U=U)
    flow = spectral_flow(block_path(blocks)).flow
    wt = nc_winding(U, D, zero_momentum_weights(model), edge_mask=edge_sites(model))
    pair = odd_index_pairing(D, U, kappa, window=W, model=model)
    bnd = boundary_invariant("endpoints_1d", (blocks[0], blocks[-1]))
    rep = IndexReport("robbin_salamon", kappa, R, sig.index, None, flow, wt.value, pair.index, None, bnd,
                      cert.g_est, k0, min(sig.gap, pair.gap), expected=cfg.crossings)
    rep.calibration = {"winding_normalization": WINDING_NORMALIZATION}
    rep.diagnostics = {"switch": cfg.switch, "g": g, "mu": cfg.mu, "commutator_DH": b,
                       "winding_raw": wt.raw, "winding_normalized": wt.normalized,
                       "window_modes": W.size, "pairing_commutator_bound": pair.commutator_bound,
                       "support_leak": pair.support_leak}
    sweep_ok = True
    if cfg.sweep_points:
        sweep = []
        for fr in np.geomspace(0.05, 0.95, cfg.sweep_points):
            s2 = CalliasSetup(D=D, kappa=fr * k0, cert=cert, H=H, mu=cfg.mu, switch=G, model=model)
            si = signature_index_odd(s2, window=W, U=U).index
            pi = odd_index_pairing(D, U, fr * k0, window=W, model=model).index
            sweep.append({"kappa_fraction": float(fr), "signature": si, "pairing": pi})
            sweep_ok = sweep_ok and si == pi == cfg.crossings
        rep.diagnostics["kappa_sweep"] = sweep
    return _finish(rep, t0, sweep_ok)


# ---------------------------------------------------------------------------
# harmonic_unbounded

def _harmonic_model(cfg: ExperimentConfig):
    lat = {"length": 40.0, "spacing": 0.1, **cfg.lattice}
    h = float(lat["spacing"])
    n = int(round(2 * lat["length"] / h)) + 1
    model = build_lattice(1, n, 1, "open", h)
    x = model.site_coordinates()[:, 0]
    H = HermitianOperator(sp.diags(x.astype(complex), format="csr"))
    D, _ = dirac_operator(model, "derivative_1d")
    return model, H, D


def _harmonic_window(cfg: ExperimentConfig, model: LatticeModel) -> tuple[Window, float]:
    R = cfg.window_radius if cfg.window_radius is not None else 30.0
    P = cfg.momentum_radius if cfg.momentum_radius is not None else 1.0 / model.spacing
    return phase_space_window(model, R / model.spacing, P), R


def harmonic_kernel_indices(cfg: ExperimentConfig, potential: HermitianOperator, model, D, W,
                            kappas) -> list:
    out = []
    for k in kappas:
        A = k * D.matrix + 1j * potential.matrix
        kc = kernel_count_index(A, window=W, orientation=KERNEL_ORIENTATION)
        out.append({"kappa": float(k), "index": kc.index, "ambiguous": kc.ambiguous,
                    "smallest_sv": kc.smallest_singular_values[:2]})
    return out


def run_harmonic_unbounded(cfg: ExperimentConfig) -> IndexReport:
    t0 = time.perf_counter()
    model, H, D = _harmonic_model(cfg)
    g = cfg.g if cfg.g is not None else 1.0
    cert = check_asymptotic_invertibility(H, model, np.abs(model.site_coordinates()[:, 0]) < g)
    k0_bounded = kappa0("bounded", g, 1.0)
    k0 = kappa0("unbounded", g, 1.0)
    kappas = cfg.kappa_values or ([cfg.kappa] if cfg.kappa is not None else [0.5, 1.0, 2.0])
    W, R = _harmonic_window(cfg, model)
    res = harmonic_kernel_indices(cfg, H, model, D, W, kappas)
    idx = [r["index"] for r in res]
    same = all(i == idx[0] for i in idx)
    # the gap above the zero mode; a window too small to hold two modes has none
    gaps = [r["smallest_sv"][1] for r in res if len(r["smallest_sv"]) > 1]
    rep = IndexReport("harmonic_unbounded", float(kappas[0]), R, None, idx[0], None, None, None, None,
                      None, cert.g_est, k0, float(min(gaps)) if gaps else None, expected=1)
    rep.calibration = {"kernel_orientation": KERNEL_ORIENTATION}
    rep.diagnostics = {"per_kappa": res, "kappa0_bounded": k0_bounded, "kappa0_unbounded": k0,
                       "window_modes": W.size,
                       "beyond_bounded_kappa0": [k for k in kappas if k > k0_bounded]}
    return _finish(rep, t0, same and not any(r["ambiguous"] for r in res))


# ---------------------------------------------------------------------------
# even_vortex

VORTEX_LOOP_RADIUS = 3.0
VORTEX_KAPPA_CAP = 0.2
VORTEX_LOOP_SAMPLES = 96


def even_localizer_kappa0(S, D0, W: Window) -> float:
    """``1 / ||[D0 (x) 1, S]||`` on the window (infinite when S commutes with D0)."""
    Dk = sp.kron(sp.identity(S.shape[0] // D0.shape[1]), D0, format="csr")
    Sc, Dc = W.compress(S), W.compress(Dk)
    c = max(np.linalg.norm(Dc @ Sc - Sc @ Dc, 2), np.linalg.norm(Dc.conj().T @ Sc - Sc @ Dc.conj().T, 2))
    return float(1.0 / c) if c > 1e-9 else float("inf")


def vortex_values(z: np.ndarray, w: int) -> np.ndarray:
    return z**w if w >= 0 else np.conj(z) ** (-w)


def _vortex_model(cfg: ExperimentConfig):
    lat = {"extent": 41, "spacing": 0.2, **cfg.lattice}
    n, h = int(lat["extent"]), float(lat["spacing"])
    spinor = build_lattice(2, (n, n), 2, "open", h)
    scalar = build_lattice(2, (n, n), 1, "open", h)
    X = scalar.site_coordinates()
    z = X[:, 0] + 1j * X[:, 1]
    return spinor, scalar, z


@lru_cache(maxsize=4)
def _vortex_dirac(spinor: LatticeModel):
    D, gamma = dirac_operator(spinor, "dirac_2d")
    D0 = (sp.csr_matrix(D.matrix)[1::2][:, 0::2]).tocsr()
    return D, gamma, D0


def _vortex_window(cfg: ExperimentConfig, scalar: LatticeModel) -> tuple[Window, float]:
    R = cfg.window_radius if cfg.window_radius is not None else 3.8
    P = cfg.momentum_radius if cfg.momentum_radius is not None else 1.7 / scalar.spacing
    return phase_space_window(scalar, R / scalar.spacing, P), R


def vortex_even_indices(t: np.ndarray, cfg: ExperimentConfig, spinor, scalar, z, W,
                        kernel_kappa: float = 1.0, localizer_kappa: float | None = None, g: float = 2.0,
                        with_kernel: bool = True) -> dict:
    D, gamma, D0 = _vortex_dirac(spinor)
    out = {}
    if with_kernel:
        T = sp.kron(sp.diags(t), sp.identity(2), format="csr")
        mask = np.abs(t) < 1.0
        cert = check_asymptotic_invertibility(sp.bmat([[None, T.conj().T], [T, None]], format="csr"),
                                              spinor, mask if mask.any() else None)
        setup = CalliasSetup(D=D, kappa=kernel_kappa, cert=cert, T=T, gamma=gamma, model=spinor)
        De = even_callias_operator(setup)
        kc = kernel_count_index(De, window=W, orientation=KERNEL_ORIENTATION)
        out.update(kernel=kc.index, kernel_ambiguous=kc.ambiguous, g_est=cert.g_est,
                   decomposition_residual=even_decomposition_residual(setup))
    G = SwitchFunction(cfg.switch, g)
    S = site_local_chiral_unitary(t, G)
    k0 = even_localizer_kappa0(S, D0, W)
    kl = localizer_kappa if localizer_kappa is not None else min(0.5 * k0, VORTEX_KAPPA_CAP)
    ep = even_pairing(mode="localizer", S_plus=S, D0=D0, kappa=kl, window=W)
    out.update(pairing=ep.index, localizer_gap=ep.gap, localizer_kappa=kl, kappa0=k0)
    return out


def vortex_loop(w_values: Callable[[np.ndarray], np.ndarray], radius: float = VORTEX_LOOP_RADIUS,
                samples: int = VORTEX_LOOP_SAMPLES) -> list:
    phi = 2 * np.pi * np.arange(samples) / samples
    tv = w_values(radius * np.exp(1j * phi))
    return [np.array([[0, np.conj(v)], [v, 0]]) for v in tv]


def run_even_vortex(cfg: ExperimentConfig) -> IndexReport:
    t0 = time.perf_counter()
    spinor, scalar, z = _vortex_model(cfg)
    W, R = _vortex_window(cfg, scalar)
    w = cfg.winding
    t = vortex_values(z, w)
    g = cfg.g if cfg.g is not None else 2.0
    kk = cfg.kappa_values[0] if cfg.kappa_values else 1.0
    res = vortex_even_indices(t, cfg, spinor, scalar, z, W, kk, cfg.kappa, g)
    kl = res["localizer_kappa"]
    bnd = boundary_invariant("loop_2d", vortex_loop(lambda q: vortex_values(q, w)))
    k0 = res["kappa0"]
    rep = IndexReport("even_vortex", kl, R, None, res["kernel"], None, None, res["pairing"], None, bnd,
                      res["g_est"], k0 if np.isfinite(k0) else None, res["localizer_gap"], expected=w)
    rep.calibration = {"kernel_orientation": KERNEL_ORIENTATION}
    rep.diagnostics = {**res, "kernel_kappa": kk, "localizer_g": g, "window_modes": W.size}
    return _finish(rep, t0, not res["kernel_ambiguous"])


def vortex_product_pairings(w1: int, w2: int, cfg: ExperimentConfig | None = None) -> tuple[int, int, int]:
    """Localizer pairings of ``T1``, ``T2`` and ``T1 T2`` for two vortex potentials."""
    cfg = cfg or ExperimentConfig("even_vortex")
    spinor, scalar, z = _vortex_model(cfg)
    W, _ = _vortex_window(cfg, scalar)
    kl = cfg.kappa
    g = cfg.g if cfg.g is not None else 2.0
    vals = []
    for t in (vortex_values(z, w1), vortex_values(z, w2), vortex_values(z, w1) * vortex_values(z, w2)):
        vals.append(vortex_even_indices(t, cfg, spinor, scalar, z, W, localizer_kappa=kl, g=g,
                                        with_kernel=False)["pairing"])
    return tuple(vals)


# ---------------------------------------------------------------------------
# nc_torus_interface

def _centered_index(idx: np.ndarray, n: int) -> np.ndarray:
    return (idx + n // 2) % n - n // 2


def harper_hamiltonian(model: LatticeModel, theta: float) -> np.ndarray:
    v1, v2 = magnetic_shifts(model, theta)
    A = v1.matrix + v2.matrix
    return (A + A.conj().T).toarray()


def interface_hamiltonian(model: LatticeModel, theta: float, trivial_level: float = 3.0,
                          smoothing: float = 3.0) -> np.ndarray:
    """Harper on ``0 <= x1 < L1/2``, the constant ``trivial_level`` elsewhere, ramped over 3 sites."""
    n1 = model.extent[0]
    x1 = _centered_index(model.site_indices()[:, 0], n1)
    ramp = lambda u: np.clip(u, 0.0, 1.0)
    half = smoothing / 2
    Wf = ramp((x1 + half) / smoothing) * ramp((n1 // 2 - half - x1) / smoothing)
    s = np.sqrt(Wf)
    Hh = harper_hamiltonian(model, theta)
    return s[:, None] * Hh * s[None, :] + np.diag((1 - Wf) * trivial_level)


@lru_cache(maxsize=2)
def _interface_spectrum(n: int, theta: float, fermi: float):
    model = build_lattice(2, (n, n), 1, "periodic", 1.0)
    H = interface_hamiltonian(model, theta)
    w, V = eigh(H - fermi * np.eye(H.shape[0]))
    return model, w, V


def harper_fermi_level(theta: float, n: int = 30) -> tuple[float, tuple[float, float]]:
    """Middle of the lowest spectral gap of the Harper model on an n x n torus."""
    model = build_lattice(2, (n, n), 1, "periodic", 1.0)
    e = np.linalg.eigvalsh(harper_hamiltonian(model, theta))
    d = np.diff(e)
    i = int(np.argmax(d > 0.1))
    if not d[i] > 0.1:
        raise ValueError("Harper spectrum has no gap")
    return float(0.5 * (e[i] + e[i + 1])), (float(e[i]), float(e[i + 1]))


def run_nc_torus_interface(cfg: ExperimentConfig) -> IndexReport:
    t0 = time.perf_counter()
    p, q = cfg.flux
    theta = 2 * np.pi * p / q
    lat = {"extent": 48, "chern_extent": 30, "box": [11, 18], **cfg.lattice}
    n, nc = int(lat["extent"]), int(lat["chern_extent"])
    fermi, gap = harper_fermi_level(theta, nc)
    g = cfg.g if cfg.g is not None else 1.0
    model, w, V = _interface_spectrum(n, theta, fermi)
    G = SwitchFunction(cfg.switch, g)
    U = (V * unitary_phase_function(G)(w)) @ V.conj().T
    idx = model.site_indices()
    x1 = _centered_index(idx[:, 0], n)
    x2 = _centered_index(idx[:, 1], n)
    b1, b2 = lat["box"]
    inbox = (np.abs(x1) <= b1) & (np.abs(x2) <= b2)
    cols = np.where(inbox)[0]
    B = sp.csr_matrix((np.ones(cols.size), (cols, np.arange(cols.size))), shape=(model.hilbert_dim, cols.size))
    inner = (np.abs(x1[cols]) <= b1 / 2) & (np.abs(x2[cols]) <= b2 / 2)
    W = Window(B, inner, "box", float(b2))
    X2 = HermitianOperator(sp.diags(x2.astype(complex), format="csr"))
    comm_box = float(np.linalg.norm(W.compress(X2) @ W.compress(U) - W.compress(U) @ W.compress(X2), 2))
    k0 = 1.0 / comm_box
    kappa = cfg.kappa if cfg.kappa is not None else 0.5 * k0
    leak_tol = float(cfg.tolerances.get("interface_leak", 2e-2))
    leak = support_leak(U, model.expand(np.abs(x1) == b1))
    pair = odd_index_pairing(X2, U, kappa, window=W)
    strip = (np.abs(x1) <= b1).astype(float) / n
    wt = nc_winding(U, PositionDerivation(model, 1), TraceWeights(strip),
                    edge_mask=np.abs(x1) == b1, edge_tol=leak_tol)
    mc = build_lattice(2, (nc, nc), 1, "periodic", 1.0)
    Pp = fermi_projection(harper_hamiltonian(mc, theta), fermi)
    Pm = fermi_projection(3.0 * np.eye(mc.hilbert_dim), fermi)
    X1c, X2c = PositionDerivation(mc, 0), PositionDerivation(mc, 1)
    cp = chern_number(Pp, X1c, X2c, cell_weights(mc))
    cm = chern_number(Pm, X1c, X2c, cell_weights(mc))
    chern_diff = cp.nearest - cm.nearest
    rep = IndexReport("nc_torus_interface", kappa, float(b2), None, None, None, wt.value, pair.index,
                      chern_diff, None, float(np.abs(w).min()), k0, pair.gap, expected=None)
    rep.calibration = {"position_winding_normalization": POSITION_WINDING_NORMALIZATION,
                       "chern_calibration": cp.calibration}
    rep.diagnostics = {"theta": theta, "fermi_level": fermi, "harper_gap": gap, "chern_plus": cp.value,
                       "chern_minus": cm.value, "chern_distance": max(cp.distance, cm.distance),
                       "winding_raw": wt.raw, "winding_normalized": wt.normalized, "leak": leak,
                       "leak_tol": leak_tol, "commutator_X2_U_box": comm_box}
    ok = leak <= leak_tol and max(cp.distance, cm.distance) < 1e-3
    return _finish(rep, t0, ok)


# ---------------------------------------------------------------------------
# bounded_transform_check

def run_bounded_transform_check(cfg: ExperimentConfig) -> IndexReport:
    t0 = time.perf_counter()
    hcfg = ExperimentConfig("harmonic_unbounded", kappa_values=cfg.kappa_values, seed=cfg.seed)
    model, H, D = _harmonic_model(hcfg)
    W, R = _harmonic_window(hcfg, model)
    kappas = cfg.kappa_values or [0.5, 1.0, 2.0]
    FH = bounded_transform(H)
    iH = harmonic_kernel_indices(hcfg, H, model, D, W, kappas)
    iF = harmonic_kernel_indices(hcfg, FH, model, D, W, kappas)
    vcfg = ExperimentConfig("even_vortex", switch=cfg.switch)
    spinor, scalar, z = _vortex_model(vcfg)
    Wv, _ = _vortex_window(vcfg, scalar)
    w = cfg.winding
    t = vortex_values(z, w)
    Ft = t / np.sqrt(1 + np.abs(t) ** 2)
    vt = vortex_even_indices(t, vcfg, spinor, scalar, z, Wv, g=2.0, with_kernel=False)["pairing"]
    vF = vortex_even_indices(Ft, vcfg, spinor, scalar, z, Wv, g=1.0, with_kernel=False)["pairing"]
    h_ok = all(a["index"] == b["index"] == 1 for a, b in zip(iH, iF))
    v_ok = vt == vF == w
    rep = IndexReport("bounded_transform_check", float(kappas[0]), R, None, iF[0]["index"], None, None, None,
                      None, None, None, None, None, expected=None)
    rep.diagnostics = {"harmonic_H": iH, "harmonic_FH": iF, "vortex_T": vt, "vortex_FT": vF, "winding": w}
    rep.calibration = {"kernel_orientation": KERNEL_ORIENTATION}
    return _finish(rep, t0, h_ok and v_ok)


RUNNERS = {
    "robbin_salamon": run_robbin_salamon,
    "harmonic_unbounded": run_harmonic_unbounded,
    "even_vortex": run_even_vortex,
    "nc_torus_interface": run_nc_torus_interface,
    "bounded_transform_check": run_bounded_transform_check,
}


def run_experiment(name: str, cfg: ExperimentConfig | None = None) -> IndexReport:
    if name not in RUNNERS:
        raise ValueError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    cfg = cfg or ExperimentConfig(name)
    if cfg.name != name:
        raise ValueError(f"config is for {cfg.name!r}, not {name!r}")
    return RUNNERS[name](cfg)


# ---------------------------------------------------------------------------
# randomized property suite

PROPERTIES = ("sf_triviality", "sf_concatenation", "sf_homomorphism", "sf_perturbation", "sf_methods",
              "mass_flip", "commutator_bound", "doubling", "locality", "chiral_projection")
DEFAULT_COUNTS = {"sf_triviality": 10, "sf_concatenation": 10, "sf_homomorphism": 8, "sf_perturbation": 8,
                  "sf_methods": 6, "mass_flip": 20, "commutator_bound": 10, "doubling": 10, "locality": 3,
                  "chiral_projection": 8}


@dataclass
class PropertyResult:
    name: str
    trials: int
    passed: bool
    counterexample: str | None = None


@dataclass
class SuiteReport:
    seed: int
    results: dict

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def to_dict(self) -> dict:
        return {"seed": self.seed, "all_passed": self.all_passed,
                "results": {k: asdict(v) for k, v in self.results.items()}}


def _serialize(**arrays) -> str:
    return json.dumps(_jsonable({k: (np.stack([np.real(v), np.imag(v)]) if np.iscomplexobj(v) else v)
                                 for k, v in arrays.items()}))


def _rand_herm(rng, n, scale=1.0):
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * (A + A.conj().T) / 2


def _rank_nonneg(A) -> int:
    return int((np.linalg.eigvalsh(A) >= 0).sum())


def _invertible_herm(rng, n, margin=0.2):
    A = _rand_herm(rng, n)
    w, V = np.linalg.eigh(A)
    w = np.where(np.abs(w) < margin, np.sign(w + 1e-300) * margin, w)
    return (V * w) @ V.conj().T


def _two_leg_path(A, B, C):
    """A -> B on [0, 1/2], B -> C on [1/2, 1]."""
    return lambda t: (1 - 2 * t) * A + 2 * t * B if t <= 0.5 else (2 - 2 * t) * B + (2 * t - 1) * C


def property_suite(seed: int, counts: dict | None = None, ec: Callable | None = None) -> SuiteReport:
    """Randomized checks of the spectral flow axioms and structural identities.

    ``ec`` replaces the essential codimension inside the flow (mutation
    testing); every flow is compared with an eigenvalue-count oracle.
    """
    c = dict(DEFAULT_COUNTS)
    if counts is not None:
        unknown = set(counts) - set(PROPERTIES)
        if unknown:
            raise ValueError(f"unknown properties {sorted(unknown)}")
        c.update(counts)
    for k, v in c.items():
        if int(v) < 1:
            raise ValueError(f"count for {k} must be at least 1, got {v}")
    rng = np.random.default_rng(seed)
    ecf = ec or essential_codimension
    results = {}

    def flow(ev, method="crossings"):
        return spectral_flow(OperatorPath(ev), method, ec=ecf).flow

    def run(name, trial):
        bad = None
        for i in range(int(c[name])):
            ce = trial(i)
            if ce is not None:
                bad = ce
                break
        results[name] = PropertyResult(name, int(c[name]), bad is None, bad)

    def triviality(i):
        n = int(rng.integers(1, 9))
        A = _invertible_herm(rng, n)
        if flow(lambda t: A) != 0:
            return _serialize(A=A)

    def concatenation(i):
        n = int(rng.integers(1, 9))
        A, B, C = (_invertible_herm(rng, n) for _ in range(3))
        ab = flow(lambda t: (1 - t) * A + t * B)
        bc = flow(lambda t: (1 - t) * B + t * C)
        ac = flow(_two_leg_path(A, B, C))
        oracle = _rank_nonneg(C) - _rank_nonneg(A)
        if not (ab + bc == ac == oracle and ab == _rank_nonneg(B) - _rank_nonneg(A)):
            return _serialize(A=A, B=B, C=C, flows=[ab, bc, ac], oracle=oracle)

    def homomorphism(i):
        n1, n2 = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        A0, A1 = _invertible_herm(rng, n1), _invertible_herm(rng, n1)
        B0, B1 = _invertible_herm(rng, n2), _invertible_herm(rng, n2)
        fa = flow(lambda t: (1 - t) * A0 + t * A1)
        fb = flow(lambda t: (1 - t) * B0 + t * B1)
        dsum = lambda t: np.block([[(1 - t) * A0 + t * A1, np.zeros((n1, n2))],
                                   [np.zeros((n2, n1)), (1 - t) * B0 + t * B1]])
        fs = flow(dsum)
        oracle = _rank_nonneg(A1) - _rank_nonneg(A0) + _rank_nonneg(B1) - _rank_nonneg(B0)
        if not fs == fa + fb == oracle:
            return _serialize(A0=A0, A1=A1, B0=B0, B1=B1, flows=[fa, fb, fs])

    def perturbation(i):
        n = int(rng.integers(1, 9))
        A, B = _invertible_herm(rng, n, 0.3), _invertible_herm(rng, n, 0.3)
        E = _rand_herm(rng, n, 0.05 / max(1, n))
        f0 = flow(lambda t: (1 - t) * A + t * B)
        f1 = flow(lambda t: (1 - t) * A + t * B + np.sin(np.pi * t) * E)
        if f0 != f1 or f0 != _rank_nonneg(B) - _rank_nonneg(A):
            return _serialize(A=A, B=B, E=E, flows=[f0, f1])

    def methods(i):
        n = int(rng.integers(1, 7))
        A, B = _invertible_herm(rng, n), _invertible_herm(rng, n)
        C = _rand_herm(rng, n)
        ev = lambda t: (1 - t) * A + t * B + np.sin(np.pi * t) * C
        fc, fw = flow(ev), spectral_flow(OperatorPath(ev), "winding").flow
        if fc != fw or fc != _rank_nonneg(B) - _rank_nonneg(A):
            return _serialize(A=A, B=B, C=C, flows=[fc, fw])

    def mass_flip(i):
        r, s = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        T = rng.normal(size=(r, s)) + 1j * rng.normal(size=(r, s))
        if rng.random() < 0.5 and min(r, s) > 1:
            T[:, 0] = 0  # force extra kernel
        sv = np.linalg.svd(T, compute_uv=False)
        rank = int((sv > 1e-10).sum())
        oracle = (s - rank) - (r - rank)
        got = index_via_mass_flip(T)
        if got != oracle:
            return _serialize(T=T, got=got, oracle=oracle)

    def commutator_bound(i):
        n = int(rng.integers(2, 10))
        D, H = _rand_herm(rng, n), _rand_herm(rng, n)
        kind = SWITCH_KINDS[i % 3]
        G = SwitchFunction(kind, float(rng.uniform(0.5, 3.0)))
        lhs, rhs = commutator_transfer_bound(D, H, G)
        if not lhs <= rhs + 1e-8:
            return _serialize(D=D, H=H, kind=kind, g=G.g, lhs=lhs, rhs=rhs)

    def doubling(i):
        r, s = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        T = rng.normal(size=(r, s)) + 1j * rng.normal(size=(r, s))
        mu = float(rng.uniform(0.1, 1.0))
        k = int(rng.integers(1, 4))
        B = mu * np.eye(k) + 0.1 * rng.normal(size=(k, k))
        Td = np.block([[T, np.zeros((r, k))], [np.zeros((k, s)), B]])
        if index_via_mass_flip(T) != index_via_mass_flip(Td):
            return _serialize(T=T, B=B)

    def locality(i):
        n = 80
        model = build_lattice(1, n, 1, "open", 1.0)
        x = model.site_coordinates()[:, 0]
        hop = 0.05 * rng.uniform(0.5, 1.0)
        H = sp.diags(np.tanh(x / 6.0)) + hop * (sp.eye(n, k=1) + sp.eye(n, k=-1))
        G = SwitchFunction(SWITCH_KINDS[i % 3], 1.0)
        fH = apply_function(HermitianOperator(H.tocsr()), G.derivative).matrix
        prof = locality_profile(fH, model, np.abs(x) < 1.0)
        far = {d: v for d, v in prof.items() if d >= 25}
        if max(far.values()) > 1e-8:
            return _serialize(hop=hop, profile=list(prof.values()))

    def chiral(i):
        n = int(rng.integers(1, 6))
        T = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        H = np.block([[np.zeros((n, n)), T.conj().T], [T, np.zeros((n, n))]])
        J = np.diag(np.r_[np.ones(n), -np.ones(n)])
        G = SwitchFunction(SWITCH_KINDS[i % 3], float(rng.uniform(0.5, 4.0)))
        try:
            cp = chiral_projection(H, J, G)
        except ArithmeticError as exc:
            return _serialize(T=T, error=str(exc))
        I = np.eye(2 * n)
        if (np.abs(cp.S @ cp.S - I).max() > 1e-9 or np.abs(cp.P @ cp.P - cp.P).max() > 1e-9
                or np.abs(cp.S - cp.S.conj().T).max() > 1e-9):
            return _serialize(T=T)

    run("sf_triviality", triviality)
    run("sf_concatenation", concatenation)
    run("sf_homomorphism", homomorphism)
    run("sf_perturbation", perturbation)
    run("sf_methods", methods)
    run("mass_flip", mass_flip)
    run("commutator_bound", commutator_bound)
    run("doubling", doubling)
    run("locality", locality)
    run("chiral_projection", chiral)
    return SuiteReport(seed, results)
