"""
Membership in the non-resonant sets U_{gamma,eps,r,s} (full) and U^N (truncated),
plus instrumented checks of their stability under action and norm perturbations.

The quantifier over k in Irr is realised by enumerating irreducible resonant
multi-indices with |a| <= check_window; all k are stacked into a KBank so that
one state is checked with a handful of matrix products.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from ..schemas.params import ModelKind, ModelParams, NonResonanceParams, ResonanceSet
from .index_core import MultiIndex, irreducible_resonant
from .integrable_part import _inverse_square_kernel, lambda_frequencies, tail_mask, tail_residual_bound, z6_gradient
from .phase_space import ActionField, FourierState, actions_of, gauges, norm_s

logger = logging.getLogger(__name__)


class Verdict(str, Enum):
    MEMBER = "member"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class MembershipReport:
    verdict: Verdict
    checked: int
    worst_margin: float  # min over k of |D_k|/floor_k - 1
    k: MultiIndex | None = None
    condition: str | None = None
    value: float | None = None
    floor: float | None = None
    tail_residual: float = 0.0  # kernel tail bound 2/K_tail of the denominator b-sums

    @property
    def is_member(self) -> bool:
        return self.verdict == Verdict.MEMBER

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "checked": self.checked,
            "worst_margin": self.worst_margin,
            "k": self.k.to_json() if self.k is not None else None,
            "condition": self.condition,
            "value": self.value,
            "floor": self.floor,
            "tail_residual": self.tail_residual,
        }


@dataclass(frozen=True)
class KBank:
    """Irreducible resonant k stacked as arrays over an action window."""

    ks: tuple[MultiIndex, ...]
    window: int
    sign: np.ndarray  # sigma_k(b), shape (n_k, 2W+1)
    gauge_product: np.ndarray
    mu_min: np.ndarray
    mu_max: np.ndarray
    lengths: np.ndarray
    outside_kernel: np.ndarray = field(repr=False)  # sum_alpha delta_alpha/(a_alpha-b)^2, b not in k

    def __len__(self) -> int:
        return len(self.ks)

    @classmethod
    def build(cls, ks: list[MultiIndex], window: int) -> "KBank":
        n = 2 * window + 1
        sign = np.zeros((len(ks), n))
        for i, k in enumerate(ks):
            for a, sigma in k.signed_counts.items():
                sign[i, a + window] = sigma
        in_k = sign != 0
        kern = _inverse_square_kernel(window)
        outside = (sign @ kern) * ~in_k
        return cls(
            ks=tuple(ks),
            window=window,
            sign=sign,
            gauge_product=np.array([k.gauge_product for k in ks]),
            mu_min=np.array([k.mu_min for k in ks]),
            mu_max=np.array([k.mu_max for k in ks]),
            lengths=np.array([len(k) for k in ks], dtype=float),
            outside_kernel=outside,
        )


@lru_cache(maxsize=16)
def k_bank(check_window: int, length_cap: int, window: int, mu1_bound: float = math.inf) -> KBank:
    ks = [k for k in irreducible_resonant(length_cap, check_window) if k.mu_max <= mu1_bound]
    logger.info(f"k-bank: {len(ks)} irreducible resonant indices (|a|<={check_window}, length<={length_cap})")
    return KBank.build(ks, window)


def bank_for(q: NonResonanceParams, which: ResonanceSet, window: int) -> KBank:
    check = min(q.check_window, window)
    cap = q.cap(which)
    if q.model == ModelKind.NLSP:
        cap = q.length_cap if q.length_cap is not None else 2 * q.r
    if which == ResonanceSet.TRUNCATED:
        n2 = q.N ** 2
        # <mu_1(k)> <= N^2 bounds every wavenumber
        check = min(check, int(math.floor(math.sqrt(max(n2 * n2 - 1.0, 0.0)))))
        return k_bank(check, cap, window, n2)
    return k_bank(check, cap, window)


def _default_params(q: NonResonanceParams) -> ModelParams:
    return ModelParams.nlsp() if q.model == ModelKind.NLSP else ModelParams()


# --- denominators over a bank

def bank_omega(bank: KBank, I: ActionField, p: ModelParams) -> np.ndarray:
    if p.model == ModelKind.NLSP:
        return bank.sign @ lambda_frequencies(I, p, truncated=True)
    return -p.phi1 * (bank.sign @ I.values)


def bank_omega_tilde(bank: KBank, I: ActionField, p: ModelParams) -> np.ndarray:
    kept = I.values ** 2 * tail_mask(I.window, p)
    return -p.phi1 * (bank.sign @ I.values) - 0.5 * p.phi1 ** 2 * (bank.outside_kernel @ kept)


def bank_omega_big(bank: KBank, I: ActionField, p: ModelParams) -> np.ndarray:
    return -p.phi1 * (bank.sign @ I.values) + bank.sign @ z6_gradient(I, p, truncated=True)


def _tail_terms(I: ActionField, q: NonResonanceParams, check: int) -> tuple[float, float, float]:
    """(T1, kernel tail, S1 tail) bounding the lattice tail |b| > W by |I|_s <b>^{-2s}."""
    W = I.window
    dist = max(W - check, 1)
    t1 = I.weighted_sup(q.s) * (1.0 + W * W) ** (-q.s)
    ker_tail = 2.0 * (1.0 / dist ** 2 + 1.0 / dist)
    if q.s > 0.5:
        s1_tail = 2.0 * I.weighted_sup(q.s) * W ** (1 - 2 * q.s) / (2 * q.s - 1)
    else:
        s1_tail = math.inf
    return t1, ker_tail, s1_tail


def _verdict(
    bank: KBank,
    conditions: list[tuple[str, np.ndarray, np.ndarray, np.ndarray]],
    tail: float = 0.0,
) -> MembershipReport:
    if len(bank) == 0:
        return MembershipReport(Verdict.MEMBER, 0, math.inf, tail_residual=tail)
    worst = math.inf
    uncertain: tuple | None = None
    for name, values, floors, residual in conditions:
        mag = np.abs(values)
        rel = mag / floors - 1.0
        i_worst = int(np.argmin(rel))
        worst = min(worst, float(rel[i_worst]))
        certain = mag + residual <= floors
        if np.any(certain):
            i = int(np.argmax(np.where(certain, floors - mag, -np.inf)))
            return MembershipReport(
                Verdict.VIOLATED, len(bank), worst, bank.ks[i], name, float(values[i]), float(floors[i]), tail
            )
        close = np.abs(mag - floors) <= residual
        if uncertain is None and np.any(close):
            i = int(np.argmax(close))
            uncertain = (bank.ks[i], name, float(values[i]), float(floors[i]))
    if uncertain is not None:
        return MembershipReport(Verdict.INCONCLUSIVE, len(bank), worst, *uncertain, tail_residual=tail)
    return MembershipReport(Verdict.MEMBER, len(bank), worst, tail_residual=tail)


def in_full_set(z: FourierState | ActionField, q: NonResonanceParams, p: ModelParams | None = None) -> MembershipReport:
    p = p or _default_params(q)
    I = z if isinstance(z, ActionField) else actions_of(z)
    bank = bank_for(q, ResonanceSet.FULL, I.window)
    t1, ker_tail, _ = _tail_terms(I, q, min(q.check_window, I.window))
    lengths = bank.lengths
    tail = tail_residual_bound(p.tail(I.window))
    if q.model == ModelKind.NLSP:
        floors = q.gamma * q.eps ** 2 * bank.gauge_product ** (-4.0)
        res = 2.0 * abs(p.phi1) * lengths * t1 * ker_tail
        return _verdict(bank, [("omega", bank_omega(bank, I, p), floors, res)], tail)
    decay = q.eps ** 2 * bank.mu_min ** (-2 * q.s)
    omega_floor = q.gamma * bank.gauge_product ** (-2.0) * decay
    tilde_floor = q.gamma * bank.gauge_product ** (-6.0) * np.maximum(decay, q.eps ** 4)
    tilde_res = 0.5 * p.phi1 ** 2 * lengths * t1 ** 2 * ker_tail
    return _verdict(
        bank,
        [
            ("omega", bank_omega(bank, I, p), omega_floor, np.zeros(len(bank))),
            ("Omega_tilde", bank_omega_tilde(bank, I, p), tilde_floor, tilde_res),
        ],
        tail,
    )


def in_truncated_set(z: FourierState | ActionField, q: NonResonanceParams, p: ModelParams | None = None) -> MembershipReport:
    p = p or _default_params(q)
    I = z if isinstance(z, ActionField) else actions_of(z)
    bank = bank_for(q, ResonanceSet.TRUNCATED, I.window)
    check = min(q.check_window, I.window)
    t1, ker_tail, s1_tail = _tail_terms(I, q, check)
    lengths = bank.lengths
    tail = tail_residual_bound(p.tail(I.window))
    n_alpha = q.N ** (-q.alpha_r)
    if q.model == ModelKind.NLSP:
        floors = np.full(len(bank), q.gamma * q.eps ** 2 * n_alpha)
        res = 2.0 * abs(p.phi1) * lengths * t1 * ker_tail
        return _verdict(bank, [("omega", bank_omega(bank, I, p), floors, res)], tail)
    decay = q.eps ** 2 * bank.mu_min ** (-2 * q.s)
    omega_floor = q.gamma * n_alpha * decay
    big_floor = q.gamma * n_alpha * np.maximum(decay, q.eps ** 4)
    mass_on_k = np.abs(bank.sign) @ I.values
    big_res = (
        p.phi1 ** 2 * mass_on_k * t1 * ker_tail
        + 0.5 * p.phi1 ** 2 * lengths * t1 ** 2 * ker_tail
        + 3.0 * abs(p.phi2) * s1_tail * mass_on_k
    )
    return _verdict(
        bank,
        [
            ("omega", bank_omega(bank, I, p), omega_floor, np.zeros(len(bank))),
            ("Omega", bank_omega_big(bank, I, p), big_floor, big_res),
        ],
        tail,
    )


def membership(z, q: NonResonanceParams, which: ResonanceSet, p: ModelParams | None = None) -> MembershipReport:
    if which == ResonanceSet.FULL:
        return in_full_set(z, q, p)
    return in_truncated_set(z, q, p)


# --- stability propositions

@dataclass(frozen=True)
class StabilityReport:
    premise: bool
    hypothesis: bool
    conclusion: bool
    distance: float
    threshold: float

    @property
    def held(self) -> bool:
        """The implication premise and hypothesis => conclusion."""
        return not (self.premise and self.hypothesis) or self.conclusion

    def to_json(self) -> dict:
        return {
            "premise": self.premise,
            "hypothesis": self.hypothesis,
            "conclusion": self.conclusion,
            "distance": self.distance,
            "threshold": self.threshold,
            "held": self.held,
        }


def _stability(
    z: FourierState,
    z2: FourierState,
    q: NonResonanceParams,
    q2: NonResonanceParams,
    distance: float,
    threshold: float,
    p: ModelParams | None,
) -> StabilityReport:
    premise = in_truncated_set(z, q, p).verdict == Verdict.MEMBER
    hypothesis = distance <= threshold
    conclusion = in_truncated_set(z2, q2, p).verdict != Verdict.VIOLATED
    return StabilityReport(premise, hypothesis, conclusion, distance, threshold)


def check_action_stability(
    z: FourierState,
    z2: FourierState,
    q: NonResonanceParams,
    q2: NonResonanceParams,
    *,
    c: float = 1.0,
    p: ModelParams | None = None,
) -> StabilityReport:
    """sup <a>^{2s}|I'_a - I_a| <= c eps^2 N^{-alpha_r}(gamma - gamma') keeps z' in U^N_{gamma'}."""
    I, J = actions_of(z), actions_of(z2)
    diff = ActionField(I.window, np.abs(J.values - I.values)).weighted_sup(q.s)
    threshold = c * q.eps ** 2 * q.N ** (-q.alpha_r) * (q.gamma - q2.gamma)
    return _stability(z, z2, q, q2, diff, threshold, p)


def check_norm_stability(
    z: FourierState,
    z2: FourierState,
    q: NonResonanceParams,
    q2: NonResonanceParams,
    *,
    c: float = 1.0,
    p: ModelParams | None = None,
) -> StabilityReport:
    """||z - z'||_s <= c eps N^{-alpha_r}(gamma - gamma') keeps z' in U^N_{gamma'}."""
    diff = norm_s(FourierState(z.window, z.xi - z2.xi, z.eta - z2.eta, False), q.s)
    threshold = c * q.eps * q.N ** (-q.alpha_r) * (q.gamma - q2.gamma)
    return _stability(z, z2, q, q2, diff, threshold, p)


def check_musset(
    z: FourierState,
    q: NonResonanceParams,
    gamma_prime: float,
    *,
    c: float = 1.0,
    p: ModelParams | None = None,
) -> StabilityReport:
    """z in U_gamma, ||z||_s <= 4 eps, eps^2 < c N^{-alpha_r}(gamma - gamma') => z in U^N_{gamma'}."""
    premise = in_full_set(z, q, p).verdict == Verdict.MEMBER and norm_s(z, q.s) <= 4 * q.eps
    threshold = c * q.N ** (-q.alpha_r) * (q.gamma - gamma_prime)
    hypothesis = q.eps ** 2 < threshold
    conclusion = in_truncated_set(z, q.with_gamma(gamma_prime), p).verdict != Verdict.VIOLATED
    return StabilityReport(premise, hypothesis, conclusion, q.eps ** 2, threshold)


def audit_action_stability(
    rng: np.random.Generator,
    states: list[FourierState],
    q: NonResonanceParams,
    q2: NonResonanceParams,
    *,
    c: float = 1.0,
    relative_size: float = 0.5,
    p: ModelParams | None = None,
) -> list[StabilityReport]:
    """Perturb each state's actions by a random amount up to relative_size of the threshold."""
    reports = []
    threshold = c * q.eps ** 2 * q.N ** (-q.alpha_r) * (q.gamma - q2.gamma)
    for z in states:
        I = actions_of(z)
        g = gauges(z.window) ** (-2 * q.s)
        bump = rng.uniform(-1.0, 1.0, I.values.size) * relative_size * threshold * g
        new_I = np.maximum(I.values + bump, 0.0)
        phases = np.angle(z.xi)
        z2 = FourierState.real(np.sqrt(new_I) * np.exp(1j * phases), z.window)
        reports.append(check_action_stability(z, z2, q, q2, c=c, p=p))
    failures = sum(not r.held for r in reports)
    if failures:
        logger.warning(f"action-stability audit: {failures}/{len(reports)} counterexamples")
    return reports
