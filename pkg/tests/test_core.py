import numpy as np
import pytest

from hmprior.core import (ConstraintSet, HyperBox, ImplausibilityResult, Kind, PValueEstimate, SummaryConstraint,
                          SummaryVector, implausibility, satisfies)
from hmprior.errors import StructuralError


def pv(kind, estimate, summary=0, index=0):
    return PValueEstimate(summary=summary, value=0.0, kind=kind, estimate=estimate, n=1000, index=index)


@pytest.fixture
def one_of_each():
    return ConstraintSet((SummaryConstraint(0, implausible=(0.198,), plausible=(1.974,)),), labels=("S1",))


def test_maximally_satisfied_constraints_score_zero(one_of_each):
    res = implausibility([pv(Kind.IMPLAUSIBLE, 0.0), pv(Kind.PLAUSIBLE, 1.0)], one_of_each)
    assert res.I == 0.0
    assert satisfies(res)


def test_single_implausible_hinge():
    cs = ConstraintSet((SummaryConstraint(0, implausible=(0.198,)),))
    res = implausibility([pv(Kind.IMPLAUSIBLE, 0.25)], cs)
    assert res.implausibility == pytest.approx(0.20)
    assert not satisfies(res)


def test_hinges_add_up(one_of_each):
    res = implausibility([pv(Kind.IMPLAUSIBLE, 0.10), pv(Kind.PLAUSIBLE, 0.01)], one_of_each)
    assert res.implausibility == pytest.approx(0.09)


def test_implausible_at_alpha_is_boundary_and_fails():
    cs = ConstraintSet((SummaryConstraint(0, implausible=(0.198,)),))
    res = implausibility([pv(Kind.IMPLAUSIBLE, 0.05)], cs)
    assert res.implausibility == 0.0
    assert res.boundary
    assert not satisfies(res)


def test_plausible_at_alpha_passes():
    cs = ConstraintSet((SummaryConstraint(0, plausible=(1.974,)),))
    res = implausibility([pv(Kind.PLAUSIBLE, 0.05)], cs)
    assert res.implausibility == 0.0
    assert not res.boundary
    assert satisfies(res)


def test_pvalues_are_ordered_and_labelled(one_of_each):
    res = implausibility([pv(Kind.PLAUSIBLE, 0.5), pv(Kind.IMPLAUSIBLE, 0.01)], one_of_each)
    assert [p.label for p in res.pvalues] == ["S1_I1", "S1_P1"]
    assert [p.kind for p in res.pvalues] == [Kind.IMPLAUSIBLE, Kind.PLAUSIBLE]


def test_mismatched_pvalues_are_structural_errors(one_of_each):
    with pytest.raises(StructuralError):
        implausibility([pv(Kind.IMPLAUSIBLE, 0.0)], one_of_each)
    with pytest.raises(StructuralError):
        implausibility([pv(Kind.IMPLAUSIBLE, 0.0), pv(Kind.IMPLAUSIBLE, 0.0)], one_of_each)
    with pytest.raises(StructuralError):
        implausibility([pv(Kind.IMPLAUSIBLE, 0.0), pv(Kind.PLAUSIBLE, 1.0, index=3)], one_of_each)


def test_pvalue_estimate_range():
    with pytest.raises(ValueError):
        pv(Kind.PLAUSIBLE, 1.5)


def test_constraint_set_validation():
    with pytest.raises(ValueError):
        ConstraintSet(())
    with pytest.raises(ValueError):
        ConstraintSet((SummaryConstraint(0, plausible=(1.0,)), SummaryConstraint(0, implausible=(2.0,))))
    with pytest.raises(ValueError):
        SummaryConstraint(0, plausible=(1.0,), alpha=1.0)
    with pytest.raises(ValueError):
        SummaryConstraint(0, plausible=(np.nan,))


def test_constraint_set_views():
    cs = ConstraintSet((SummaryConstraint(0, implausible=(3.9,), plausible=(2.8,)),
                        SummaryConstraint(1, plausible=(0.05, 0.95))))
    assert cs.B == 4
    assert cs.max_implausibility() == pytest.approx(0.95 + 3 * 0.05)
    assert all(c.alpha == 0.1 for c in cs.with_alpha(0.1).constraints)
    assert cs.active([1]).summaries == (1,)
    assert [c.label for c in cs.checks()] == ["S1_I1", "S1_P1", "S2_P1", "S2_P2"]


def test_box_log_coordinates():
    box = HyperBox(lower=[1e-6, 0.5], upper=[0.5, 10.0], scale=["log", "linear"])
    p = box.point([0.01, 2.0], natural=True)
    assert p.values[0] == pytest.approx(np.log(0.01))
    assert p.values[1] == 2.0
    np.testing.assert_allclose(p.natural(), [0.01, 2.0])
    assert box.contains(p)
    assert not box.contains([1.0, 2.0], natural=True)
    np.testing.assert_allclose(box.widths, [np.log(0.5 / 1e-6), 9.5])


@pytest.mark.parametrize("lower, upper, scale", [
    ([1.0], [1.0], None),
    ([0.0], [1.0], ["log"]),
    ([0.0, 0.0], [1.0], None),
    ([0.0], [np.inf], None),
])
def test_box_rejects_bad_bounds(lower, upper, scale):
    with pytest.raises(ValueError):
        HyperBox(lower=lower, upper=upper, scale=scale)


def test_summary_vector_marks_non_finite_entries():
    s = SummaryVector([1.0, np.inf, np.nan])
    assert s.J == 3
    assert s.degenerate.tolist() == [False, True, True]


@pytest.mark.parametrize("kind, direction", [(Kind.IMPLAUSIBLE, 1), (Kind.PLAUSIBLE, -1)])
def test_implausibility_is_monotone_in_each_pvalue(kind, direction):
    cs = ConstraintSet((SummaryConstraint(0, implausible=(0.198,), plausible=(1.974,)),))
    other = Kind.PLAUSIBLE if kind is Kind.IMPLAUSIBLE else Kind.IMPLAUSIBLE
    grid = np.linspace(0.0, 1.0, 41)
    for fixed in (0.0, 0.03, 0.5, 1.0):
        scores = [implausibility([pv(kind, p), pv(other, fixed)], cs).I for p in grid]
        assert np.all(direction * np.diff(scores) >= 0.0)


def test_implausibility_ignores_constraint_order():
    first = SummaryConstraint(0, implausible=(3.9,), plausible=(2.8,))
    second = SummaryConstraint(1, plausible=(0.05, 0.95), alpha=0.1)
    pvals = [pv(Kind.IMPLAUSIBLE, 0.2, summary=0), pv(Kind.PLAUSIBLE, 0.01, summary=0),
             pv(Kind.PLAUSIBLE, 0.04, summary=1), pv(Kind.PLAUSIBLE, 0.7, summary=1, index=1)]
    forward = implausibility(pvals, ConstraintSet((first, second)))
    backward = implausibility(pvals[::-1], ConstraintSet((second, first)))
    assert forward.I == pytest.approx(backward.I, abs=1e-15)
    assert forward.I == pytest.approx(0.15 + 0.04 + 0.06)
    assert satisfies(forward) == satisfies(backward)


def test_result_without_pvalues_never_satisfies():
    res = ImplausibilityResult(lam=None, pvalues=[], implausibility=np.inf)
    assert not satisfies(res)
