"""
Integrable Hamiltonians Z2, Z4, Z6 and the small denominators built from them.

All functions take an ActionField (window K) and sum over its window; actions
outside the window are zero, so sums over b in Z are exact for the field given.
The b-sums inside the small denominators (Omega-tilde, Omega through dZ6/dI
and omega^NLSP) run over |b| <= K_tail (ModelParams.tail, default 4K); the
kernel tail beyond it is bounded by 2/K_tail. Hamiltonians and the
derivatives used by flows keep the whole window.
"""
from __future__ import annotations

import logging
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
import sympy
from scipy import stats

from ..core.errors import MalformedIndexError
from ..schemas.params import ModelKind, ModelParams
from .index_core import MultiIndex
from .phase_space import ActionField, FourierState, actions_of, norm_s, wavenumbers

logger = logging.getLogger(__name__)


def tail_residual_bound(tail_window: int) -> float:
    """sum_{|b| > K} b^{-2} <= 2/K."""
    return 2.0 / max(tail_window, 1)


@lru_cache(maxsize=32)
def _inverse_square_kernel(window: int) -> np.ndarray:
    """D[a, b] = 1/(a-b)^2 off the diagonal, 0 on it."""
    a = wavenumbers(window).astype(float)
    diff = a[:, None] - a[None, :]
    with np.errstate(divide="ignore"):
        kern = np.where(diff != 0, 1.0 / np.where(diff != 0, diff, 1.0) ** 2, 0.0)
    kern.setflags(write=False)
    return kern


@lru_cache(maxsize=32)
def _tail_kernel(window: int, tail: int) -> np.ndarray:
    """Inverse-square kernel with the summed index b cut to |b| <= tail."""
    if tail >= window:
        return _inverse_square_kernel(window)
    kern = _inverse_square_kernel(window) * (np.abs(wavenumbers(window)) <= tail)[None, :]
    kern.setflags(write=False)
    return kern


def lattice_kernel(window: int, p: ModelParams) -> np.ndarray:
    return _tail_kernel(window, p.tail(window))


def tail_mask(window: int, p: ModelParams) -> np.ndarray:
    return np.abs(wavenumbers(window)) <= p.tail(window)


def _power_sums(I: np.ndarray) -> tuple[float, float, float]:
    return float(I.sum()), float((I ** 2).sum()), float((I ** 3).sum())


def _field_values(I: ActionField | np.ndarray) -> tuple[np.ndarray, int]:
    """Values and window; raw (possibly complex) arrays are accepted for off-real evaluation."""
    if isinstance(I, ActionField):
        return I.values, I.window
    v = np.asarray(I)
    return v, (v.size - 1) // 2


# --- Hamiltonians

def z2_value(I: ActionField, p: ModelParams) -> float:
    a = wavenumbers(I.window).astype(float)
    return float(np.sum((a * a + p.phi0) * I.values))


def z4_value(I: ActionField, p: ModelParams) -> float:
    if p.model == ModelKind.NLSP:
        return z4_nlsp_value(I, p)
    s1, s2, _ = _power_sums(I.values)
    return p.phi1 * s1 * s1 - 0.5 * p.phi1 * s2


def z4_nlsp_value(I: ActionField, p: ModelParams) -> float:
    kern = _inverse_square_kernel(I.window)
    v = I.values
    return float(p.phi1 * v @ kern @ v)


def z6_value(I: ActionField, p: ModelParams) -> float:
    v = I.values
    kern = _inverse_square_kernel(I.window)
    s1, s2, s3 = _power_sums(v)
    kernel_part = -0.5 * p.phi1 ** 2 * float((v ** 2) @ kern @ v)
    return kernel_part + p.phi2 / 6.0 * (6 * s1 ** 3 - 9 * s2 * s1 + 4 * s3)


# --- derivatives in I

def z4_hessian(window: int, p: ModelParams) -> np.ndarray:
    """d^2 Z4 / dI_a dI_b, constant in I."""
    if p.model == ModelKind.NLSP:
        return 2.0 * p.phi1 * _inverse_square_kernel(window)
    n = 2 * window + 1
    return p.phi1 * (2.0 * np.ones((n, n)) - np.eye(n))


def lambda_frequencies(I: ActionField | np.ndarray, p: ModelParams, *, truncated: bool = False) -> np.ndarray:
    """dZ4/dI_a for the model; truncated cuts the NLSP b-sum to the tail window."""
    v, window = _field_values(I)
    if p.model == ModelKind.NLSP:
        kern = lattice_kernel(window, p) if truncated else _inverse_square_kernel(window)
        return 2.0 * p.phi1 * (kern @ v)
    return 2.0 * p.phi1 * v.sum() - p.phi1 * v


def z6_gradient(I: ActionField | np.ndarray, p: ModelParams, *, truncated: bool = False) -> np.ndarray:
    """dZ6/dI_c; truncated cuts the kernel b-sums to the tail window."""
    v, window = _field_values(I)
    kern = lattice_kernel(window, p) if truncated else _inverse_square_kernel(window)
    s1, s2 = v.sum(), (v ** 2).sum()
    kernel_part = -p.phi1 ** 2 * (v * (kern @ v) + 0.5 * (kern @ (v ** 2)))
    return kernel_part + p.phi2 * (3 * s1 ** 2 - 3 * v * s1 - 1.5 * s2 + 2 * v ** 2)


def z6_hessian(I: ActionField | np.ndarray, p: ModelParams) -> np.ndarray:
    """d^2 Z6 / dI_c dI_d (linear in I)."""
    v, window = _field_values(I)
    kern = _inverse_square_kernel(window)
    s1 = v.sum()
    hess = -p.phi1 ** 2 * kern * (v[:, None] + v[None, :])
    hess += p.phi2 * (6 * s1 - 3 * v[:, None] - 3 * v[None, :])
    diag = -p.phi1 ** 2 * (kern @ v) + p.phi2 * (3 * s1 - 2 * v)
    np.fill_diagonal(hess, diag)
    return hess


def z6_hessian_coefficients(window: int, p: ModelParams) -> np.ndarray:
    """L[c, d, b] with d^2 Z6/dI_c dI_d = sum_b L[c, d, b] I_b."""
    n = 2 * window + 1
    kern = _inverse_square_kernel(window)
    eye = np.eye(n)
    L = np.empty((n, n, n))
    for c in range(n):
        for d in range(n):
            if c != d:
                L[c, d] = -p.phi1 ** 2 * kern[c, d] * (eye[c] + eye[d]) + p.phi2 * (6 - 3 * eye[c] - 3 * eye[d])
            else:
                L[c, d] = -p.phi1 ** 2 * kern[c] + p.phi2 * (3 - 2 * eye[c])
    return L


# --- small denominators

def _signed_vector(k: MultiIndex, window: int) -> np.ndarray:
    vec = np.zeros(2 * window + 1)
    for a, sigma in k.signed_counts.items():
        if abs(a) > window:
            raise ValueError(f"wavenumber {a} outside the action window {window}")
        vec[a + window] = sigma
    return vec


def omega(k: MultiIndex, I: ActionField, p: ModelParams, *, closed_form: bool = True) -> float:
    """omega_k = -phi'(0) sum delta I (irreducible k) or sum delta dZ4/dI for general j."""
    if p.model == ModelKind.NLSP:
        return omega_nlsp(k, I, p)
    if closed_form:
        if not k.is_irreducible:
            raise MalformedIndexError(f"omega in closed form needs an irreducible multi-index, got {k}")
        return float(-p.phi1 * _signed_vector(k, I.window) @ I.values)
    return float(_signed_vector_full(k, I.window) @ lambda_frequencies(I, p))


def _signed_vector_full(j: MultiIndex, window: int) -> np.ndarray:
    vec = np.zeros(2 * window + 1)
    for d, a in j.entries:
        vec[a + window] += d
    return vec


def omega_big(k: MultiIndex, I: ActionField, p: ModelParams) -> float:
    """Omega_k = omega_k + sum delta dZ6/dI."""
    sig = _signed_vector(k, I.window)
    return float(-p.phi1 * sig @ I.values + sig @ z6_gradient(I, p, truncated=True))


def omega_tilde(k: MultiIndex, I: ActionField, p: ModelParams) -> float:
    if not k.is_irreducible:
        raise MalformedIndexError(f"Omega-tilde needs an irreducible multi-index, got {k}")
    v = I.values
    a_all = wavenumbers(I.window)
    kset = set(k.wavenumbers)
    outside = np.array([b not in kset for b in a_all]) & tail_mask(I.window, p)
    total = -p.phi1 * float(_signed_vector(k, I.window) @ v)
    for delta, a in k.entries:
        diff = (a - a_all).astype(float)
        mask = outside & (diff != 0)
        total -= 0.5 * p.phi1 ** 2 * delta * float(np.sum(v[mask] ** 2 / diff[mask] ** 2))
    return total


def omega_nlsp(k: MultiIndex, I: ActionField, p: ModelParams) -> float:
    """2 phi'(0) sum_alpha delta_alpha sum_{b != a_alpha} I_b/(a_alpha - b)^2."""
    lam = lambda_frequencies(I, p, truncated=True)
    return float(_signed_vector_full(k, I.window) @ lam)


def small_denominator(kind: str, k: MultiIndex, I: ActionField, p: ModelParams) -> float:
    if kind == "omega":
        return omega(k, I, p)
    if kind == "Omega":
        return omega_big(k, I, p)
    if kind == "Omega_tilde":
        return omega_tilde(k, I, p)
    raise ValueError(f"unknown denominator kind {kind!r}")


# --- exact oracle

def action_symbols(window: int) -> dict[int, sympy.Symbol]:
    return {int(a): sympy.Symbol(f"I_{a}".replace("-", "m"), nonnegative=True) for a in wavenumbers(window)}


def z4_expression(window: int, model: ModelKind = ModelKind.NLS, phi1=sympy.Symbol("phi1")):
    I = action_symbols(window)
    if model == ModelKind.NLSP:
        return phi1 * sum(
            I[a] * I[b] / sympy.Integer((a - b) ** 2) for a in I for b in I if a != b
        ), I
    s1 = sum(I.values())
    s2 = sum(x ** 2 for x in I.values())
    return phi1 * s1 ** 2 - sympy.Rational(1, 2) * phi1 * s2, I


def z6_expression(window: int, phi1=sympy.Symbol("phi1"), phi2=sympy.Symbol("phi2")):
    I = action_symbols(window)
    s1 = sum(I.values())
    s2 = sum(x ** 2 for x in I.values())
    s3 = sum(x ** 3 for x in I.values())
    kernel = sum(I[a] ** 2 * I[b] / sympy.Integer((a - b) ** 2) for a in I for b in I if a != b)
    return -sympy.Rational(1, 2) * phi1 ** 2 * kernel + phi2 / 6 * (6 * s1 ** 3 - 9 * s2 * s1 + 4 * s3), I


def omega_exact(k: MultiIndex, actions: Mapping[int, sympy.Rational], phi1=sympy.Symbol("phi1")):
    """-phi1 sum delta I_a with exact (or symbolic) actions."""
    return -phi1 * sum(delta * actions[a] for delta, a in k.entries)


# --- measured constants

def fit_transport_constant(
    pairs: Sequence[tuple[FourierState, FourierState]],
    ks: Sequence[MultiIndex],
    p: ModelParams,
    s: float,
) -> float:
    """Largest ratio |omega_k(I)-omega_k(I')| / (||z-z'||_s mu_min^{-2s} max(||z||_s, ||z'||_s))."""
    worst = 0.0
    for z, w in pairs:
        I, J = actions_of(z), actions_of(w)
        dist = norm_s(FourierState(z.window, z.xi - w.xi, z.eta - w.eta, False), s)
        scale = max(norm_s(z, s), norm_s(w, s))
        if dist == 0 or scale == 0:
            continue
        for k in ks:
            lhs = abs(omega(k, I, p) - omega(k, J, p))
            worst = max(worst, lhs / (dist * k.mu_min ** (-2 * s) * scale))
    return worst


def omega_tilde_gap_exponent(
    k: MultiIndex,
    shifts: Sequence[int],
    p: ModelParams,
    s: float,
    *,
    amplitude: float = 0.1,
) -> float:
    """Log-log slope of |Omega~ - Omega| against <mu_min> when k is translated by each shift.

    Actions are I_a = amplitude <a>^{-2s}, so |I|_s stays fixed along the sweep.
    """
    xs, ys = [], []
    for t in shifts:
        kt = MultiIndex.of((d, a + t) for d, a in k.entries)
        window = max(abs(a) for _, a in kt.entries) + 2
        a = wavenumbers(window).astype(float)
        I = ActionField(window, amplitude * (1.0 + a * a) ** (-s))
        gap = abs(omega_tilde(kt, I, p) - omega_big(kt, I, p))
        if gap > 0:
            xs.append(np.log(kt.mu_min))
            ys.append(np.log(gap))
    fit = stats.linregress(xs, ys)
    logger.info(f"Omega-tilde gap slope {fit.slope:.3f} over {len(xs)} shifts (r={fit.rvalue:.3f})")
    return float(fit.slope)
