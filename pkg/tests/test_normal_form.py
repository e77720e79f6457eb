import pytest

from app.services.index_core import MultiIndex
from app.services.normal_form import (
    near_identity_check,
    normal_form_pipeline,
    pipeline_scaling_experiment,
    sextic_stage,
    staged_normal_form,
)
from app.services.phase_space import random_state
from app.services.rational_algebra import (
    HomologicalMode,
    RationalHamiltonian,
    RationalTerm,
    homological_residual,
    random_states,
)

CORE = MultiIndex.from_sides([-1, 2, 2], [0, 0, 3])
ACTIONS = MultiIndex.from_sides([0, 1, 2, 3], [0, 1, 2, 3])


def test_action_only_input_passes_through(params):
    H = RationalHamiltonian.from_terms([RationalTerm(ACTIONS, coeff=2.0)], 4)
    result = normal_form_pipeline(H, 4, params)
    assert result.generators == []
    assert result.unsolved is None
    assert result.Z[4].terms == H.terms
    assert result.stages[0].eliminated == 0


def test_order_four_irreducible_part_is_removed(params, rng):
    H = RationalHamiltonian.from_terms(
        [RationalTerm(CORE.with_action(0), coeff=0.8 - 0.3j), RationalTerm(CORE.with_action(4), coeff=0.5)], 5
    ).with_conjugates()
    result = normal_form_pipeline(H, 4, params)
    assert not result.degraded
    assert result.unsolved is None
    assert [s.chi_tag for s in result.stages] == ["H*_Omega"]
    (name, chi), = result.generators
    assert name == "tau6"
    assert homological_residual(-H, chi, HomologicalMode.Z4Z6, params, random_states(rng, 5, 5)) <= 1e-10
    assert all(t.order == 5 for t in result.remainder)


def test_sextic_stage_removes_the_irreducible_sextic(params):
    H = RationalHamiltonian.from_terms([RationalTerm(CORE, coeff=1.0 + 0.5j)], 4).with_conjugates()
    out, chi, report = sextic_stage(H, params, 4)
    assert report.chi_tag == "H*_omega"
    assert report.eliminated == 2
    assert chi is not None and len(chi) == 2
    assert not out.of_order(3).split_action()[1]


def test_quartic_scaling_matches_the_remainder_degree(params):
    report = pipeline_scaling_experiment(params, 4, 2, (0.05, 0.1, 0.2))
    assert report.expected == 5
    assert report.slope == pytest.approx(5.0, abs=1e-6)
    assert report.within_tolerance


@pytest.mark.parametrize("eps", [0.02, 0.05])
def test_normalising_map_is_close_to_identity(params, rng, eps):
    staged = staged_normal_form(params, 4, 2)
    z = random_state(rng, 4, amplitude=eps)
    report = near_identity_check(staged, z, eps, params)
    assert report.holds
    assert report.distance > 0


@pytest.mark.slow
def test_staged_order_three(params):
    staged = staged_normal_form(params, 4, 3)
    assert staged.stages[0].stage == "tau4"
    assert staged.sextic_chi is not None
    assert 3 in staged.pipeline.Z
