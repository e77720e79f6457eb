from itertools import combinations_with_replacement

import pytest

from app.core.errors import CertificateError
from app.schemas.params import ModelParams
from app.services.birkhoff_engine import (
    I_UNIT,
    PHI0,
    PHI1,
    RING,
    PolynomialHamiltonian,
    birkhoff_normal_form,
    chi4,
    exact,
    extract_z6_oracle,
    p2m_coefficients,
    poisson_poly,
    truncate_resonant,
    z2_polynomial,
    z4_polynomial,
    z6_closed_form,
    z6_polynomial,
)
from app.services.index_core import MultiIndex
from app.services.phase_space import poisson_numeric, random_state

QUARTET = MultiIndex.from_sides([2, 0], [1, 1])
SEXTIC = MultiIndex.from_sides([0, 1, 5], [-1, 3, 4])


def test_quartic_symmetric_coefficient():
    P4 = p2m_coefficients(2, None, 3)
    assert P4.symmetric_coefficient(QUARTET) == PHI1 / 12


def test_quadratic_part_is_phi0_times_actions():
    P2 = p2m_coefficients(1, None, 3)
    assert len(P2) == 7
    assert all(c == PHI0 for c in P2.terms.values())
    assert P2.coefficient(MultiIndex.action(-2)) == PHI0


def test_quartic_support_is_the_momentum_class():
    K = 2
    pairs = list(combinations_with_replacement(range(-K, K + 1), 2))
    expected = sum(1 for plus in pairs for minus in pairs if sum(plus) == sum(minus))
    assert len(p2m_coefficients(2, None, K)) == expected


def test_z2_bracket_multiplies_by_laplacian():
    monomial = PolynomialHamiltonian.from_terms({QUARTET: exact(1)}, 3)
    out = poisson_poly(z2_polynomial(3), monomial)
    assert out.terms == {QUARTET: RING(I_UNIT * QUARTET.laplacian)}


def test_bracket_with_itself_vanishes():
    P4 = p2m_coefficients(2, None, 2)
    assert not poisson_poly(P4, P4)


def test_exact_bracket_matches_numeric_bracket(params, rng):
    F, G = p2m_coefficients(2, None, 2), chi4(None, 2)
    z = random_state(rng, 2, amplitude=0.5)
    exact_value = poisson_poly(F, G).compile(params).value(z)
    numeric = poisson_numeric(F.compile(params), G.compile(params), z)
    assert exact_value == pytest.approx(numeric, rel=1e-10, abs=1e-14)


def test_chi4_coefficients():
    chi = chi4(None, 3)
    assert chi.symmetric_coefficient(QUARTET) == PHI1 * I_UNIT / 24
    assert not chi.resonant_part()


def test_quartic_homological_identity():
    K = 6
    residual = z4_polynomial(None, K) - p2m_coefficients(2, None, K) - poisson_poly(z2_polynomial(K), chi4(None, K))
    assert not residual


def test_oracle_bracket_part_is_pairwise():
    K = 4
    oracle = extract_z6_oracle(None, K)
    assert not oracle.alpha
    assert not oracle.gamma
    assert oracle.irreducible_vanishes
    assert len(oracle.beta) == (2 * K + 1) * (2 * K)
    for (a, b), c in oracle.beta.items():
        assert c == -PHI1 ** 2 / (2 * (a - b) ** 2)


@pytest.mark.slow
def test_oracle_on_a_wider_window():
    oracle = extract_z6_oracle(None, 8)
    assert not oracle.alpha and not oracle.gamma
    assert oracle.beta[(8, -8)] == -PHI1 ** 2 / 512


def test_z6_matches_closed_form():
    assert z6_polynomial(None, 3) == z6_closed_form(3)


def test_truncation_moves_wide_sextics_to_the_remainder():
    K6 = PolynomialHamiltonian.from_terms({SEXTIC: exact(1), MultiIndex.action(1): exact(2)}, 5)
    kept, rest, cert = truncate_resonant(K6, 3.0, 1 / 6)
    assert SEXTIC in rest.terms
    assert MultiIndex.action(1) in kept.terms
    assert cert.holds

    kept, rest, cert = truncate_resonant(K6, 100.0, 0.1)
    assert SEXTIC in kept.terms and not rest
    assert cert.checked == 1
    assert cert.worst_ratio == pytest.approx(26 ** 0.5 / 1e4)


def test_truncation_refuses_an_uncertified_split():
    K6 = PolynomialHamiltonian.from_terms({SEXTIC: exact(1)}, 5)
    with pytest.raises(CertificateError):
        truncate_resonant(K6, 2.0, 2.0)


def test_birkhoff_quartic_normal_form_is_z4():
    bnf = birkhoff_normal_form(ModelParams(), 3, 2)
    assert bnf.resonant[4] == z4_polynomial(None, 3)
    assert set(bnf.generators) == {4}
    assert bnf.normal_form().is_real()
