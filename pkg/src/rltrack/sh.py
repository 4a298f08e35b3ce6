"""Real, antipodally symmetric spherical harmonics (even orders up to 6).

Coefficient order is l = 0, 2, 4, 6 and, within each l, m = -l .. l, giving
28 coefficients.  The basis is orthonormal on the unit sphere:
``m < 0 -> sqrt(2) Im Y_l^|m|``, ``m = 0 -> Y_l^0``, ``m > 0 -> sqrt(2) Re Y_l^m``.
"""
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.special import eval_legendre, roots_legendre, sph_harm_y

SH_ORDER = 6
N_COEFFS = 28
DEFAULT_KAPPA = 30.0


def sh_indices(order=SH_ORDER):
    return [(l, m) for l in range(0, order + 1, 2) for m in range(-l, l + 1)]


def real_sh_basis(dirs, order=SH_ORDER):
    """Basis matrix of shape (N, n_coeffs) evaluated at unit directions."""
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    phi = np.arctan2(d[:, 1], d[:, 0])
    cols = []
    for l, m in sh_indices(order):
        y = sph_harm_y(l, abs(m), theta, phi)
        if m < 0:
            cols.append(np.sqrt(2.0) * y.imag)
        elif m == 0:
            cols.append(y.real)
        else:
            cols.append(np.sqrt(2.0) * y.real)
    return np.stack(cols, axis=1)


def sh_eval(coeffs, dirs, order=SH_ORDER):
    return real_sh_basis(dirs, order) @ np.asarray(coeffs, dtype=np.float64)


@lru_cache(maxsize=16)
def _kernel_eigenvalues(kappa, order=SH_ORDER, nodes=256):
    # Funk-Hecke: lambda_l = 2 pi \int_{-1}^{1} k(t) P_l(t) dt
    t, w = roots_legendre(nodes)
    k = np.exp(kappa * (t * t - 1.0))
    return {l: 2.0 * np.pi * np.sum(w * k * eval_legendre(l, t)) for l in range(0, order + 1, 2)}


def sh_project_peaks(peaks, kappa=DEFAULT_KAPPA, order=SH_ORDER):
    """SH coefficients of ``f(u) = sum_i exp(kappa (<u, v_i>^2 - 1))``.

    The projection is the exact L2 projection onto the even band up to
    ``order``, computed through the Funk-Hecke eigenvalues of the lobe
    kernel, so it is independent of any sphere sampling.
    """
    if not kappa > 0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    v = np.asarray(peaks, dtype=np.float64).reshape(-1, 3)
    if v.shape[0] == 0:
        raise ValueError("at least one peak is required")
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0):
        raise ValueError("peaks must be nonzero")
    lam = _kernel_eigenvalues(float(kappa), order)
    basis = real_sh_basis(v / norms[:, None], order)
    scale = np.array([lam[l] for l, _ in sh_indices(order)])
    return basis.sum(axis=0) * scale


def repulsion_sphere(n=100, iters=2000, seed=0):
    """``n`` axes spread by electrostatic repulsion with antipodal charges.

    Deterministic for a given seed.  Used to regenerate the shipped table.
    """
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    step = 0.05
    for _ in range(iters):
        force = np.zeros_like(x)
        for sign in (1.0, -1.0):
            d = x[:, None, :] - sign * x[None, :, :]
            r = np.linalg.norm(d, axis=-1)
            if sign > 0:
                np.fill_diagonal(r, np.inf)
            force += (d / r[..., None] ** 3).sum(axis=1)
        force -= (force * x).sum(axis=1, keepdims=True) * x
        x = x + step * force / np.abs(force).max()
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        step *= 0.998
    x[x[:, 2] < 0] *= -1
    return x


@lru_cache(maxsize=1)
def sphere100():
    """The shipped 100-direction repulsion sphere, shape (100, 3)."""
    text = resources.files("rltrack").joinpath("data/sphere100.txt").read_text()
    dirs = np.loadtxt(text.splitlines())
    dirs.flags.writeable = False
    return dirs
