"""
Random initial data, Monte Carlo membership probabilities and the
partial-fraction lower bound used in the counting arguments.

Every trial t of a run with master seed S draws from its own Philox stream
keyed by (S, t), so estimates are reproducible and independent of evaluation order.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import stats

from ..core.errors import InternalContradictionError, MalformedIndexError, NormBudgetError
from ..schemas.params import ModelKind, ModelParams, NonResonanceParams, ResonanceSet, SamplingLaw
from .index_core import ClassTag, MultiIndex, enumerate_class
from .phase_space import ActionField, FourierState, gauges, norm_s, wavenumbers
from .resonance_sets import MembershipReport, Verdict, membership

logger = logging.getLogger(__name__)

NORMALISATION = math.tanh(math.pi) / (2 * math.pi)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trial])))


def default_gamma(eps: float) -> float:
    return eps ** (1.0 / 3.0 + 1.0 / 12.0)


def default_cutoff(eps: float, r: int, s: float, cap: float | None = None) -> float:
    """N = eps^{-(2r-2)/s}, optionally capped."""
    n = eps ** (-(2 * r - 2) / s) if s > 0 else math.inf
    n = max(n, 1.0)
    return min(n, cap) if cap is not None else n


# --- sampling

def sample_actions(law: SamplingLaw, rng: np.random.Generator | None = None) -> ActionField:
    rng = rng if rng is not None else trial_rng(law.seed, 0)
    upper = np.array([law.upper(int(a)) for a in wavenumbers(law.window)])
    if law.model == ModelKind.NLSP:
        values = rng.uniform(0.0, 1.0, upper.size) * upper
    else:
        # I_a^2 uniform on (0, upper^2)
        values = np.sqrt(rng.uniform(0.0, 1.0, upper.size) * upper ** 2)
    return ActionField(law.window, values)


def build_initial_state(
    I: ActionField,
    eps: float,
    phases: np.ndarray | None = None,
    *,
    s: float | None = None,
) -> FourierState:
    """u0 = c eps sum sqrt(I_a) e^{i(ax + theta_a)}; with s given, ||u0||_{l^1_s} < eps/2 is enforced."""
    phases = np.zeros(I.values.size) if phases is None else np.asarray(phases, dtype=float)
    xi = NORMALISATION * eps * np.sqrt(I.values) * np.exp(1j * phases)
    z = FourierState.real(xi, I.window)
    if s is not None and eps > 0:
        function_norm = 0.5 * norm_s(z, s)
        if function_norm >= eps / 2:
            raise NormBudgetError(f"||u0||_s = {function_norm:.6g} is not below eps/2 = {eps / 2:.6g}")
    return z


def draw_initial_state(law: SamplingLaw, eps: float, trial: int) -> tuple[ActionField, FourierState]:
    rng = trial_rng(law.seed, trial)
    I = sample_actions(law, rng)
    phases = rng.uniform(0.0, 2 * np.pi, I.values.size)
    return I, build_initial_state(I, eps, phases, s=law.s)


# --- probability estimates

@dataclass(frozen=True)
class ProbabilityEstimate:
    trials: int
    members: int
    violated: int
    inconclusive: int
    p_hat: float
    ci_low: float
    ci_high: float
    records: list[dict] = field(default_factory=list, repr=False, compare=False)

    @property
    def failure_rate(self) -> float:
        return 1.0 - self.p_hat

    def summary(self) -> dict:
        return {
            "trials": self.trials,
            "members": self.members,
            "violated": self.violated,
            "inconclusive": self.inconclusive,
            "p_hat": self.p_hat,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return math.nan, math.nan
    ci = stats.binomtest(successes, n).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def _tally(reports: Sequence[MembershipReport]) -> tuple[int, int, int]:
    members = sum(r.verdict == Verdict.MEMBER for r in reports)
    violated = sum(r.verdict == Verdict.VIOLATED for r in reports)
    return members, violated, len(reports) - members - violated


def estimate_probability(
    law: SamplingLaw,
    q: NonResonanceParams,
    trials: int,
    *,
    which: ResonanceSet = ResonanceSet.FULL,
    p: ModelParams | None = None,
) -> ProbabilityEstimate:
    """Fraction of law draws at eps = q.eps that are members; inconclusive trials are left out of p_hat."""
    if trials < 100:
        raise ValueError("estimate_probability needs at least 100 trials")
    records, reports = [], []
    for t in range(trials):
        _, z = draw_initial_state(law, q.eps, t)
        report = membership(z, q, which, p)
        reports.append(report)
        records.append(_trial_record(law.seed, t, q.eps, report))
    members, violated, inconclusive = _tally(reports)
    decided = members + violated
    p_hat = members / decided if decided else math.nan
    low, high = wilson_interval(members, decided)
    if inconclusive > 0.01 * trials:
        logger.warning(f"{inconclusive}/{trials} inconclusive verdicts at eps={q.eps:g}, gamma={q.gamma:g}")
    logger.info(f"p_hat={p_hat:.4f} [{low:.4f}, {high:.4f}] over {decided} decided trials (gamma={q.gamma:g})")
    return ProbabilityEstimate(trials, members, violated, inconclusive, p_hat, low, high, records)


def _trial_record(seed: int, trial: int, eps: float, report: MembershipReport) -> dict:
    return {
        "seed": seed,
        "trial": trial,
        "eps": eps,
        "verdict": report.verdict.value,
        "worst_margin": report.worst_margin,
        "k": report.k.to_json() if report.verdict == Verdict.VIOLATED and report.k is not None else None,
    }


def gamma_sweep(
    law: SamplingLaw,
    q: NonResonanceParams,
    gammas: Sequence[float],
    trials: int,
    *,
    which: ResonanceSet = ResonanceSet.FULL,
    p: ModelParams | None = None,
) -> list[tuple[float, ProbabilityEstimate]]:
    """Same draws for every gamma, so failure counts are monotone in gamma."""
    return [(g, estimate_probability(law, q.with_gamma(g), trials, which=which, p=p)) for g in gammas]


def fit_failure_slope(gammas: Sequence[float], failure_rates: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares (slope, intercept, R^2) of the failure rate against gamma."""
    fit = stats.linregress(np.asarray(gammas, dtype=float), np.asarray(failure_rates, dtype=float))
    r2 = float(fit.rvalue) ** 2 if np.isfinite(fit.rvalue) else math.nan
    return float(fit.slope), float(fit.intercept), r2


# --- epsilon sequences

@dataclass(frozen=True)
class SequenceReport:
    nu: float
    per_n: list[dict]
    inner_frequencies: list[float]
    outer_fraction: float
    records: list[dict] = field(default_factory=list, repr=False, compare=False)

    def summary(self) -> dict:
        return {"nu": self.nu, "per_n": self.per_n, "outer_fraction": self.outer_fraction}


def epsilon_sequence_experiment(
    eps0: float,
    law: SamplingLaw,
    q: NonResonanceParams,
    n_max: int,
    xn_mode: str = "iid",
    *,
    outer_trials: int = 20,
    inner_trials: int = 20,
    nu: float | None = None,
    which: ResonanceSet = ResonanceSet.FULL,
    p: ModelParams | None = None,
) -> SequenceReport:
    """Draw z once per outer trial, then eps_n = eps0 2^{-(n + x_n)} per inner trial.

    The inner frequency is the share of inner trials where every eps_n z is a member;
    the outer fraction is the share of z whose inner frequency reaches 1 - nu.
    """
    if xn_mode not in ("iid", "constant"):
        raise ValueError(f"xn_mode must be 'iid' or 'constant', got {xn_mode!r}")
    nu = eps0 ** (1.0 / 6.0) if nu is None else nu
    per_n = [{"n": n, "member": 0, "violated": 0, "inconclusive": 0} for n in range(n_max + 1)]
    inner_freqs, records = [], []
    for o in range(outer_trials):
        rng = trial_rng(law.seed, o)
        I = sample_actions(law, rng)
        phases = rng.uniform(0.0, 2 * np.pi, I.values.size)
        ok = decided = 0
        for j in range(inner_trials):
            x_rng = trial_rng(law.seed + 1, o * inner_trials + j)
            xs = x_rng.uniform(0.0, 1.0, n_max + 1) if xn_mode == "iid" else np.full(n_max + 1, x_rng.uniform())
            verdicts = []
            for n in range(n_max + 1):
                eps_n = eps0 * 2.0 ** (-(n + xs[n]))
                z = build_initial_state(I, eps_n, phases)
                v = membership(z, q.with_eps(eps_n), which, p).verdict
                per_n[n][v.value] += 1
                verdicts.append(v)
                records.append({"outer": o, "inner": j, "n": n, "eps": eps_n, "verdict": v.value})
            if Verdict.VIOLATED in verdicts:
                decided += 1
            elif Verdict.INCONCLUSIVE not in verdicts:
                decided += 1
                ok += 1
        inner_freqs.append(ok / decided if decided else math.nan)
    good = sum(f >= 1.0 - nu for f in inner_freqs if not math.isnan(f))
    outer = good / outer_trials
    logger.info(f"eps-sequence: outer fraction {outer:.3f} at nu={nu:.3g} ({outer_trials}x{inner_trials} draws)")
    return SequenceReport(nu, per_n, inner_freqs, outer, records)


def scaling_invariance_experiment(
    law: SamplingLaw,
    q: NonResonanceParams,
    factors: Sequence[float],
    trials: int,
    *,
    which: ResonanceSet = ResonanceSet.FULL,
    p: ModelParams | None = None,
) -> dict:
    """For draws that are members at eps, count membership at every eps * factor."""
    base = kept = inconclusive = 0
    for t in range(trials):
        rng = trial_rng(law.seed, t)
        I = sample_actions(law, rng)
        phases = rng.uniform(0.0, 2 * np.pi, I.values.size)
        if membership(build_initial_state(I, q.eps, phases), q, which, p).verdict != Verdict.MEMBER:
            continue
        base += 1
        verdicts = [
            membership(build_initial_state(I, q.eps * f, phases), q.with_eps(q.eps * f), which, p).verdict
            for f in factors
        ]
        if all(v == Verdict.MEMBER for v in verdicts):
            kept += 1
        elif Verdict.VIOLATED not in verdicts:
            inconclusive += 1
    return {"base_members": base, "kept": kept, "inconclusive": inconclusive, "factors": list(factors)}


# --- partial fractions

def partial_fraction_value(k: MultiIndex, x: int) -> Fraction:
    return sum((Fraction(delta, (x - a) ** 2) for delta, a in k.entries), Fraction(0))


def partial_fraction_bound(k: MultiIndex) -> Fraction:
    """(6m)^{-4m} prod <a_alpha>^{-2}, exact."""
    m = len(k) // 2
    out = Fraction(1, (6 * m) ** (4 * m))
    for _, a in k.entries:
        out /= 1 + a * a
    return out


def find_a_star(k: MultiIndex) -> tuple[int, Fraction, Fraction]:
    """Integer a* in ]-3m, 3m[ off k maximising |sum delta/(a*-a)^2|, with the certified floor."""
    if not k.is_irreducible or not k.is_resonant or len(k) < 2:
        raise MalformedIndexError(f"find_a_star needs an irreducible resonant multi-index, got {k}")
    m = len(k) // 2
    poles = set(k.wavenumbers)
    best: tuple[int, Fraction] | None = None
    for x in range(-3 * m + 1, 3 * m):
        if x in poles:
            continue
        value = partial_fraction_value(k, x)
        if best is None or abs(value) > abs(best[1]):
            best = (x, value)
    bound = partial_fraction_bound(k)
    if best is None or abs(best[1]) < bound:
        raise InternalContradictionError(f"no a* reaches the partial-fraction floor {bound} for {k}")
    return best[0], best[1], bound


def support_ratio(I: ActionField, s: float) -> float:
    """max <a>^{2s+4} I_a; at most 1 for law-conforming draws."""
    return float(np.max(gauges(I.window) ** (2 * s + 4) * I.values, initial=0.0))


def random_irreducible_resonant(rng: np.random.Generator, m: int, window: int) -> MultiIndex:
    """Uniform draw among the irreducible resonant indices of length 2m in the window."""
    pool = enumerate_class(m, window, ClassTag.R, irreducible_only=True)
    pool = list(pool)
    if not pool:
        raise MalformedIndexError(f"no irreducible resonant index with m={m} in window {window}")
    return pool[int(rng.integers(len(pool)))]
