"""
Staged rational normal form on a finite window.

tau2 is the polynomial Birkhoff step (birkhoff_engine). tau4 removes the
irreducible sextic part with Z4 (omega denominators); the tau6 steps remove
the irreducible part of every order 4 .. r with Z4 + Z6 (Omega denominators).
Each step replaces {Z, chi} by -R exactly and expands the rest of the
Hamiltonian in a Lie series truncated at order r + extra.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from ..core.errors import ClosureViolationError, NoWitnessError, ResourceBudgetError
from ..schemas.params import IntegratorConfig, ModelParams, NonResonanceParams
from .birkhoff_engine import BirkhoffNormalForm, PolynomialHamiltonian, birkhoff_normal_form, z6_closed_form
from .dynamics import flow_generic
from .phase_space import FourierState, norm_s, random_state
from .rational_algebra import (
    DenominatorFloor,
    HomologicalMode,
    RationalHamiltonian,
    bracket,
    solve_homological,
    subclass_check,
)

logger = logging.getLogger(__name__)


@dataclass
class StageReport:
    stage: str
    order: int
    eliminated: int
    chi_terms: int
    chi_tag: str | None
    chi_weight: float
    weight_ok: bool
    z_terms: int
    hamiltonian_terms: int
    degraded: bool = False

    def to_json(self) -> dict:
        return {
            "stage": self.stage, "order": self.order, "eliminated": self.eliminated,
            "chi_terms": self.chi_terms, "chi_tag": self.chi_tag, "chi_weight": self.chi_weight,
            "weight_ok": self.weight_ok, "z_terms": self.z_terms,
            "hamiltonian_terms": self.hamiltonian_terms, "degraded": self.degraded,
        }


@dataclass
class NormalFormResult:
    window: int
    r: int
    Z: dict[int, RationalHamiltonian] = field(default_factory=dict)
    generators: list[tuple[str, RationalHamiltonian]] = field(default_factory=list)
    remainder: RationalHamiltonian | None = None
    unsolved: RationalHamiltonian | None = None
    stages: list[StageReport] = field(default_factory=list)
    degraded: bool = False
    floor: DenominatorFloor | None = None

    @property
    def residual(self) -> RationalHamiltonian:
        parts = [h for h in (self.remainder, self.unsolved) if h is not None]
        total = RationalHamiltonian.zero(self.window)
        for h in parts:
            total = total + h
        return total

    def to_json(self) -> dict:
        return {
            "window": self.window,
            "r": self.r,
            "degraded": self.degraded,
            "stages": [s.to_json() for s in self.stages],
            "Z": {str(m): z.to_json() for m, z in sorted(self.Z.items())},
            "generators": [{"stage": name, "chi": chi.to_json()} for name, chi in self.generators],
            "remainder_terms": len(self.remainder) if self.remainder is not None else 0,
            "unsolved_terms": len(self.unsolved) if self.unsolved is not None else 0,
        }


def lie_transform(
    rest: RationalHamiltonian,
    chi: RationalHamiltonian,
    solved: RationalHamiltonian,
    p: ModelParams,
    max_order: int,
    *,
    term_cap: int | None = None,
) -> RationalHamiltonian:
    """(Z + rest) o Phi^1_chi - Z, given {Z, chi} = -solved; orders above max_order are dropped."""
    term = (bracket(rest, chi, p, term_cap=term_cap) - solved).truncated(max_order).pruned()
    total = rest + term
    k = 2
    while term:
        term = bracket(term, chi, p, term_cap=term_cap).truncated(max_order).scale(1.0 / k).pruned()
        total = total + term
        k += 1
    return total.pruned()


def _stage(
    name: str,
    H: RationalHamiltonian,
    order: int,
    mode: HomologicalMode,
    p: ModelParams,
    max_order: int,
    term_cap: int | None,
) -> tuple[RationalHamiltonian, RationalHamiltonian | None, StageReport]:
    block = H.of_order(order)
    A, R = block.split_action()
    if not R:
        return H, None, StageReport(name, order, 0, 0, None, 1.0, True, len(A), len(H))
    chi = solve_homological(-R, mode)
    try:
        tag = subclass_check(chi, r=order - 2 if mode == HomologicalMode.Z4Z6 else order - 1).tag.value
    except NoWitnessError as exc:
        raise ClosureViolationError(f"{name} generator at order {order} left the rational class: {exc}") from exc
    weight_ok = chi.weight <= R.weight + 1e-12
    if not weight_ok:
        raise ClosureViolationError(f"{name} generator weight {chi.weight:g} exceeds the input weight {R.weight:g}")
    before = H.weight
    H = lie_transform(H, chi, R, p, max_order, term_cap=term_cap)
    if H.weight > before + 1e-12:
        raise ClosureViolationError(f"weight grew from {before:g} to {H.weight:g} in {name} at order {order}")
    report = StageReport(name, order, len(R), len(chi), tag, chi.weight, weight_ok, len(A), len(H))
    logger.info(f"{name} order {order}: eliminated {len(R)} terms, chi in {tag}, {len(H)} terms after transform")
    return H, chi, report


def sextic_stage(
    H: RationalHamiltonian,
    p: ModelParams,
    max_order: int,
    *,
    term_cap: int | None = None,
) -> tuple[RationalHamiltonian, RationalHamiltonian | None, StageReport]:
    """tau4: the irreducible order-3 part is removed with Z4; H excludes Z4 and keeps Z6."""
    return _stage("tau4", H, 3, HomologicalMode.Z4, p, max_order, term_cap)


def normal_form_pipeline(
    H: RationalHamiltonian,
    r: int,
    p: ModelParams,
    q: NonResonanceParams | None = None,
    *,
    extra: int = 1,
    term_cap: int | None = None,
) -> NormalFormResult:
    """tau6 steps for orders 4 .. r on a Hamiltonian given without Z4 + Z6.

    Action-only parts are collected as Z_{2m}; a term-cap overflow stops the
    iteration with degraded=True and leaves the unsolved irreducible parts in
    the report.
    """
    result = NormalFormResult(H.window, r)
    max_order = r + extra
    H = H.truncated(max_order)
    for order in range(4, r + 1):
        try:
            H, chi, report = _stage("tau6", H, order, HomologicalMode.Z4Z6, p, max_order, term_cap)
        except ResourceBudgetError as exc:
            logger.warning(f"pipeline degraded at order {order}: {exc}")
            result.degraded = True
            result.stages.append(StageReport("tau6", order, 0, 0, None, 0.0, False, 0, len(H), degraded=True))
            break
        if chi is not None:
            result.generators.append(("tau6", chi))
        result.stages.append(report)
    for order in range(4, r + 1):
        A, R = H.of_order(order).split_action()
        if A:
            result.Z[order] = A
        if R:
            result.unsolved = (result.unsolved or RationalHamiltonian.zero(H.window)) + R
    result.remainder = H.filter(lambda t: t.order > r)
    if q is not None:
        result.floor = DenominatorFloor.from_params(q)
        logger.info(f"pipeline floors: omega {result.floor.omega:.3e}, h {result.floor.h:.3e} (s={result.floor.s:g})")
    return result


# --- composition with the Birkhoff step

@dataclass
class StagedNormalForm:
    birkhoff: BirkhoffNormalForm
    sextic_chi: RationalHamiltonian | None
    pipeline: NormalFormResult
    stages: list[StageReport]
    window_defect: RationalHamiltonian | None = None

    def to_json(self) -> dict:
        return {
            "birkhoff_generators": sorted(self.birkhoff.generators),
            "stages": [s.to_json() for s in self.stages],
            "pipeline": self.pipeline.to_json(),
            "window_defect_terms": len(self.window_defect) if self.window_defect is not None else 0,
        }


def staged_normal_form(p: ModelParams, window: int, r: int, *, extra: int = 1, term_cap: int | None = None) -> StagedNormalForm:
    """tau2, then tau4 for r >= 3, then the tau6 steps for r >= 4.

    The tau6 steps divide by Omega built from the closed-form Z6; the in-window
    sextic action part differs from it by window truncation, and that
    difference stays in the Hamiltonian as an order-3 action-only term.
    """
    bnf = birkhoff_normal_form(p, window, r)
    max_order = r + extra
    stages: list[StageReport] = []
    rest = RationalHamiltonian.zero(window)
    for degree in range(6, 2 * r + 1, 2):
        rest = rest + RationalHamiltonian.from_polynomial(bnf.resonant.get(degree, PolynomialHamiltonian.zero(window)), p)
    sextic_chi = None
    defect = None
    if r >= 3:
        rest, sextic_chi, report = sextic_stage(rest, p, max_order, term_cap=term_cap)
        stages.append(report)
    if r >= 4:
        closed = RationalHamiltonian.from_polynomial(z6_closed_form(window), p)
        rest = rest - closed
        defect = rest.of_order(3).pruned()
        rest = rest.filter(lambda t: t.order != 3) + defect
    pipeline = normal_form_pipeline(rest, r, p, extra=extra, term_cap=term_cap)
    if r == 3:
        pipeline.Z[3] = rest.of_order(3)
    stages.extend(pipeline.stages)
    return StagedNormalForm(bnf, sextic_chi, pipeline, stages, defect)


# --- measurements

@dataclass(frozen=True)
class ScalingReport:
    r: int
    eps: tuple[float, ...]
    norms: tuple[float, ...]
    slope: float | None
    expected: int
    tolerance: float = 0.15

    @property
    def within_tolerance(self) -> bool:
        return self.slope is not None and abs(self.slope - self.expected) <= self.tolerance * self.expected

    def to_json(self) -> dict:
        return {
            "r": self.r, "eps": list(self.eps), "norms": list(self.norms), "slope": self.slope,
            "expected": self.expected, "within_tolerance": self.within_tolerance,
        }


def residual_field_norm(
    staged: StagedNormalForm, z: FourierState, p: ModelParams, s: float, floor: DenominatorFloor | None = None
) -> float:
    """||X_R(z)||_s for R = Birkhoff remainder + rational remainder + unsolved parts."""
    K = staged.birkhoff.window
    dx, de = staged.birkhoff.remainder.compile(p).vector_field(z.widened(K))
    rational = staged.pipeline.residual
    if rational:
        rx, re = rational.compile(p, floor or staged.pipeline.floor).vector_field(z.widened(K))
        dx, de = dx + rx, de + re
    return norm_s(FourierState(K, np.asarray(dx), np.asarray(de), False), s)


def pipeline_scaling_experiment(
    p: ModelParams,
    window: int,
    r: int,
    eps_grid: Sequence[float],
    *,
    s: float = 1.0,
    seed: int = 0,
    staged: StagedNormalForm | None = None,
) -> ScalingReport:
    """Log-log slope of ||X_R(eps z)||_s over the grid; the expected exponent is 2r + 1."""
    staged = staged or staged_normal_form(p, window, r)
    z0 = random_state(np.random.default_rng(seed), window, amplitude=1.0, decay=1.0, floor=0.3)
    norms = [residual_field_norm(staged, z0.scaled(e), p, s) for e in eps_grid]
    pairs = [(np.log(e), np.log(v)) for e, v in zip(eps_grid, norms) if v > 0]
    slope = None
    if len(pairs) >= 2:
        slope = float(stats.linregress([x for x, _ in pairs], [y for _, y in pairs]).slope)
    report = ScalingReport(r, tuple(float(e) for e in eps_grid), tuple(norms), slope, 2 * r + 1)
    logger.info(f"pipeline scaling r={r}: slope {slope} (expected {2 * r + 1})")
    return report


@dataclass(frozen=True)
class NearIdentityReport:
    eps: float
    distance: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.distance <= self.bound

    def to_json(self) -> dict:
        return {"eps": self.eps, "distance": self.distance, "bound": self.bound, "holds": self.holds}


def near_identity_check(
    staged: StagedNormalForm,
    z: FourierState,
    eps: float,
    p: ModelParams,
    *,
    s: float = 1.0,
    cfg: IntegratorConfig | None = None,
) -> NearIdentityReport:
    """||tau(z) - z||_s against eps^{3/2} for a state already of size eps.

    tau is realised as the composition of the time-1 flows of every generator.
    """
    K = staged.birkhoff.window
    start = z.widened(K)
    w = start
    handles = [staged.birkhoff.generators[d].compile(p) for d in sorted(staged.birkhoff.generators)]
    if staged.sextic_chi is not None:
        handles.append(staged.sextic_chi.compile(p))
    handles += [chi.compile(p) for _, chi in staged.pipeline.generators]
    for handle in handles:
        w = flow_generic(handle, w, 1.0, cfg)
    gap = FourierState(K, w.xi - start.xi, w.eta - start.eta, False)
    report = NearIdentityReport(eps, norm_s(gap, s), eps ** 1.5)
    logger.info(f"near-identity check eps={eps:g}: distance {report.distance:.3e} vs bound {report.bound:.3e}")
    return report
