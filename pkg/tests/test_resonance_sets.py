import numpy as np
import pytest

from app.schemas.params import ModelParams, NonResonanceParams, ResonanceSet, SamplingLaw
from app.services.phase_space import ActionField, wavenumbers
from app.services.resonance_sets import (
    Verdict,
    audit_action_stability,
    check_musset,
    in_full_set,
    in_truncated_set,
    membership,
)
from app.services.stochastic_lab import draw_initial_state


def _q(**kw) -> NonResonanceParams:
    fields = dict(gamma=0.01, eps=0.1, r=3, s=1.0, N=2.0, check_window=4, length_cap=6)
    fields.update(kw)
    return NonResonanceParams(**fields)


def _law(**kw) -> SamplingLaw:
    fields = dict(s=1.0, window=4, seed=3)
    fields.update(kw)
    return SamplingLaw(**fields)


def test_equal_actions_violate_the_omega_condition():
    report = in_full_set(ActionField.constant(4, 0.01), _q())
    assert report.verdict == Verdict.VIOLATED
    assert report.condition == "omega"
    assert report.k is not None and report.k.is_irreducible


def test_empty_bank_means_member():
    # no irreducible resonant index of length <= 4 exists
    report = in_full_set(ActionField.constant(4, 0.01), _q(r=2, length_cap=None))
    assert report.verdict == Verdict.MEMBER
    assert report.checked == 0


def test_membership_is_nested_in_gamma():
    law = _law()
    q = _q()
    for t in range(30):
        _, z = draw_initial_state(law, q.eps, t)
        if in_full_set(z, q).verdict == Verdict.MEMBER:
            assert in_full_set(z, q.with_gamma(q.gamma / 2)).verdict == Verdict.MEMBER


@pytest.mark.parametrize("which", [ResonanceSet.FULL, ResonanceSet.TRUNCATED])
def test_angle_rotation_keeps_the_verdict(which):
    law = _law()
    q = _q()
    rng = np.random.default_rng(7)
    for t in range(10):
        _, z = draw_initial_state(law, q.eps, t)
        a = membership(z, q, which)
        b = membership(z.rotated(rng.uniform(0, 2 * np.pi, z.xi.size)), q, which)
        assert a.verdict == b.verdict
        assert a.worst_margin == pytest.approx(b.worst_margin, rel=1e-9)


def test_nlsp_membership_uses_model_frequencies():
    p = ModelParams.nlsp()
    law = _law(model=p.model)
    q = _q(model=p.model)
    for t in range(5):
        _, z = draw_initial_state(law, q.eps, t)
        report = in_full_set(z, q, p)
        assert report.verdict in set(Verdict)
        assert report.checked > 0


def test_truncated_bank_respects_mu1_bound():
    # with N = 1 every wavenumber is capped by <mu_1(k)> <= 1, so nothing is checked
    report = in_truncated_set(ActionField.constant(4, 0.01), _q(N=1.0))
    assert report.verdict == Verdict.MEMBER
    assert report.checked == 0


def test_musset_implication_holds():
    law = _law()
    q = _q(gamma=0.5, eps=0.01, N=1.0)
    for t in range(10):
        _, z = draw_initial_state(law, q.eps, t)
        assert check_musset(z, q, 0.25).held


def test_action_stability_audit_has_no_counterexample():
    law = _law()
    q = _q(gamma=0.02, N=1.5)
    q2 = q.with_gamma(0.01)
    states = [draw_initial_state(law, q.eps, t)[1] for t in range(10)]
    reports = audit_action_stability(np.random.default_rng(1), states, q, q2, relative_size=0.05)
    assert all(r.held for r in reports)


def test_law_draws_are_real_states():
    law = _law()
    _, z = draw_initial_state(law, 0.1, 0)
    assert z.reality_defect() == 0.0
    assert z.xi.size == wavenumbers(law.window).size


def test_reports_carry_the_kernel_tail_bound():
    I = ActionField.constant(4, 0.01)
    assert in_full_set(I, _q()).tail_residual == pytest.approx(2.0 / 16)
    report = in_truncated_set(I, _q(), ModelParams(tail_window=2))
    assert report.tail_residual == pytest.approx(1.0)
    assert report.to_json()["tail_residual"] == report.tail_residual
