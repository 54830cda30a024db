"""Helpers shared by the test modules."""
import numpy as np
import scipy.sparse as sp

from callias_lab.calculus import SwitchFunction, apply_function, locality_profile
from callias_lab.experiments import ExperimentConfig, _rs_parts
from callias_lab.operators import _shift_1d, _with_fiber, as_matrix

# below this the profile is at the roundoff floor and no longer ordered
NOISE_FLOOR = 1e-12


def rs_locality(crossings: int, hopping: float = 0.0, seed: int = 0):
    """Profile of G'(H) on the path model, distances from the sites where G' can be nonzero.

    ``hopping`` adds ``t (S + S*)`` so that H is banded rather than site-local.
    """
    model, a, H, blocks, _, _ = _rs_parts(ExperimentConfig(name="robbin_salamon", crossings=crossings, seed=seed))
    region = np.array([np.abs(np.linalg.eigvalsh(b)).min() for b in blocks]) < a / 2
    M = as_matrix(H)
    if hopping:
        S = _shift_1d(model.n_sites, False)
        M = (M + hopping * _with_fiber(model, S + S.T)).tocsr()
    G = SwitchFunction("erf_based", a)
    fH = apply_function(M, G.derivative)
    return locality_profile(fH, model, region)


def decays_monotonically(profile: dict, start: int, below: float) -> bool:
    ds = [d for d in sorted(profile) if d >= start]
    vals = [profile[d] for d in ds]
    if not vals or max(vals) >= below:
        return False
    return all(b <= a or b < NOISE_FLOOR for a, b in zip(vals, vals[1:]))


def herm(rng, n, scale=1.0):
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * (A + A.conj().T) / 2


def sparse_eye(n):
    return sp.identity(n, dtype=complex, format="csr")
