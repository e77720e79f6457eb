import numpy as np
import pytest

from app.core.errors import DenominatorFloorError, MalformedIndexError, NotSolvableError, ResourceBudgetError
from app.services.birkhoff_engine import z4_polynomial
from app.services.index_core import MultiIndex
from app.services.phase_space import finite_difference_gradient
from app.services.rational_algebra import (
    DenominatorFloor,
    HomologicalMode,
    RationalHamiltonian,
    RationalTerm,
    Subclass,
    bracket,
    closure_audit,
    distribute_derivatives_certificate,
    homological_audit,
    homological_residual,
    oracle_error,
    random_member,
    random_states,
    solve_homological,
    subclass_check,
)

W = 4
CORE = MultiIndex.from_sides([-1, 2, 2], [0, 0, 3])


def _single(term: RationalTerm) -> RationalHamiltonian:
    return RationalHamiltonian.from_terms([term], W)


def _z4(params) -> RationalHamiltonian:
    return RationalHamiltonian.from_polynomial(z4_polynomial(None, W), params)


def test_terms_need_resonant_numerators_and_irreducible_denominators():
    with pytest.raises(MalformedIndexError):
        RationalTerm(MultiIndex.from_sides([2, 0], [1, 1]))
    with pytest.raises(MalformedIndexError):
        RationalTerm(CORE, k_omega=(MultiIndex.action(1),))
    t = RationalTerm(CORE.with_action(1), k_omega=(CORE,), h_Omega=(CORE,))
    assert (t.m, t.n, t.p, t.q, t.order) == (4, 1, 1, 1, 1)


def test_z4_bracket_cancels_the_omega_denominator(params, rng):
    F = _single(RationalTerm(CORE, k_omega=(CORE,)))
    B = bracket(_z4(params), F, params)
    Bc = B.compile(params)
    for z in random_states(rng, W, 5):
        assert abs(Bc.value(z)) == pytest.approx(abs(z.monomial(CORE)), rel=1e-9)
    err, skipped = oracle_error(B, _z4(params), F, params, random_states(rng, W, 5))
    assert skipped == 0 and err <= 1e-10


def test_self_bracket_cancels(params, rng):
    H = random_member(rng, Subclass.H_OMEGA_STAR, 2, W)
    B = bracket(H, H, params)
    top = max(abs(t.coeff) for t in H)
    assert max((abs(t.coeff) for t in B), default=0.0) <= 1e-10 * top * top


def test_term_cap_is_enforced(params):
    F = _single(RationalTerm(CORE, k_omega=(CORE,)))
    with pytest.raises(ResourceBudgetError):
        bracket(_z4(params), F, params, term_cap=0)


def test_closure_audit_one_pair_per_grid_cell(params, rng):
    records = closure_audit(rng, params, pairs=9, points=8)
    assert len(records) == 9
    assert {r.family.value for r in records} == {"omega", "Omega"}
    assert all(r.passed for r in records), [r.to_json() for r in records if not r.passed]


@pytest.mark.slow
def test_closure_audit_full_size(params, rng):
    records = closure_audit(rng, params, pairs=200)
    assert all(r.passed for r in records)


def test_homological_audit_residuals(params, rng):
    rows = homological_audit(rng, params, inputs=4, window=W, points=6)
    assert rows
    assert all(row["residual"] <= 1e-9 for row in rows)
    assert all(row["weight_preserved"] for row in rows)
    assert {row["chi_tag"] for row in rows if row["mode"] == "Z4"} == {"H*_omega"}


def test_action_only_input_is_not_solvable():
    H = _single(RationalTerm(MultiIndex.action(1)))
    with pytest.raises(NotSolvableError):
        solve_homological(H, HomologicalMode.Z4)


def test_sextic_generator_is_in_h_star_omega(params, rng):
    H = _single(RationalTerm(CORE, coeff=0.3 + 0.1j)).with_conjugates()
    assert subclass_check(H).tag == Subclass.H_OMEGA
    chi = solve_homological(H, HomologicalMode.Z4)
    report = subclass_check(chi)
    assert (report.tag, report.r) == (Subclass.H_OMEGA_STAR, 2)
    assert homological_residual(H, chi, HomologicalMode.Z4, params, random_states(rng, W, 5)) <= 1e-10


def test_z4z6_generator_is_in_h_star_big_omega(params, rng):
    H = _single(RationalTerm(CORE.with_action(0), coeff=1.5)).with_conjugates()
    chi = solve_homological(H, HomologicalMode.Z4Z6)
    report = subclass_check(chi)
    assert (report.tag, report.r) == (Subclass.H_BIG_OMEGA_STAR, 2)
    assert homological_residual(H, chi, HomologicalMode.Z4Z6, params, random_states(rng, W, 5)) <= 1e-10


def test_split_action_recombines(rng):
    H = random_member(rng, Subclass.H_BIG_OMEGA, 4, W, terms=4)
    A, R = H.split_action()
    assert all(t.is_action_only for t in A)
    assert not any(t.is_action_only for t in R)
    assert (A + R).terms == H.terms


def test_polynomial_members_share_the_polynomial_gradient(params, rng):
    z = random_states(rng, W, 1)[0]
    gx, ge = _z4(params).compile(params).gradient(z)
    px, pe = z4_polynomial(None, W).compile(params).gradient(z)
    assert np.allclose(gx, px, rtol=1e-12, atol=1e-15)
    assert np.allclose(ge, pe, rtol=1e-12, atol=1e-15)


def test_rational_gradient_matches_finite_differences(params, rng):
    F = _single(RationalTerm(CORE, k_omega=(CORE,), coeff=0.7 + 0.2j)).compile(params)
    z = random_states(rng, W, 1)[0]
    gx, ge = F.gradient(z)
    fx, fe = finite_difference_gradient(F, z)
    scale = np.max(np.abs(np.concatenate([gx, ge])))
    assert np.max(np.abs(fx - gx)) <= 1e-6 * scale
    assert np.max(np.abs(fe - ge)) <= 1e-6 * scale


def test_reality_closed_members_take_real_values(params, rng):
    H = random_member(rng, Subclass.H_BIG_OMEGA_STAR, 3, W)
    assert H.is_real()
    Hc = H.compile(params)
    for z in random_states(rng, W, 5):
        assert abs(Hc.value(z).imag) <= 1e-12 * Hc.magnitude(z)


def test_denominator_floor_refuses_small_divisors(params, rng):
    F = _single(RationalTerm(CORE, k_omega=(CORE,)))
    z = random_states(rng, W, 1)[0]
    with pytest.raises(DenominatorFloorError):
        F.compile(params, DenominatorFloor(omega=1e6)).value(z)


def test_derivative_certificate():
    chi = solve_homological(_single(RationalTerm(CORE)), HomologicalMode.Z4)
    assert distribute_derivatives_certificate(chi, C=1.0).holds

    far = MultiIndex.of((d, a + 40) for d, a in CORE.entries)
    cert = distribute_derivatives_certificate(_single(RationalTerm(CORE, k_omega=(far,))), C=1.0)
    assert not cert.holds
    assert cert.failures == [0]
