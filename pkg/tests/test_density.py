import numpy as np
import pytest
from scipy import stats

from hmprior.core import ConstraintSet, Kind, SummaryConstraint
from hmprior.density import (Kde1D, constraint_pvalues, joint_density_check, kde2d_fit, kde_fit, kde_pvalue,
                             pvalues_for_summary, silverman_bandwidth)
from hmprior.errors import StructuralError


@pytest.fixture(scope="module")
def normal_sample():
    return np.random.default_rng(0).standard_normal(2000)


def test_rule_of_thumb_bandwidth():
    q = stats.norm.ppf((np.arange(100) + 0.5) / 100)
    x = (q - q.mean()) / np.std(q)
    assert silverman_bandwidth(x) == pytest.approx(0.9 * 100 ** -0.2, rel=1e-12)


def test_single_point_density_is_the_kernel():
    kde = Kde1D(np.array([0.0]), 1.0)
    assert kde.pdf(0.0)[0] == pytest.approx(1.0 / np.sqrt(2 * np.pi))


def test_symmetric_sample_gives_symmetric_density():
    half = np.random.default_rng(1).standard_normal(300)
    kde = kde_fit(np.concatenate([half, -half]))
    x = np.linspace(0.1, 3.0, 7)
    np.testing.assert_allclose(kde.pdf(x), kde.pdf(-x), rtol=1e-10)


def test_pvalue_extremes(normal_sample):
    kde = kde_fit(normal_sample)
    assert kde_pvalue(kde, normal_sample, 10.0) == 0.0
    grid = np.linspace(-2.0, 2.0, 4001)
    mode = grid[np.argmax(kde.logpdf(grid))]
    assert kde_pvalue(kde, normal_sample, mode) > 0.99
    best = normal_sample[np.argmax(kde.logpdf(normal_sample))]
    assert kde_pvalue(kde, normal_sample, best) == 1.0


def test_tail_pvalue_on_a_large_sample():
    x = np.random.default_rng(2).standard_normal(50_000)
    assert kde_pvalue(kde_fit(x), x, 1.96) == pytest.approx(0.05, abs=0.01)


def test_point_mass_sample():
    kde = kde_fit(np.full(100, 3.0))
    assert kde.degenerate
    sample = kde.sample
    assert kde_pvalue(kde, sample, 3.0) == 1.0
    assert kde_pvalue(kde, sample, 3.1) == 0.0


def test_pvalue_is_affine_invariant(normal_sample):
    a, b = -3.0, 7.5
    moved = a * normal_sample + b
    for h in (-1.5, 0.3, 2.2):
        p = kde_pvalue(kde_fit(normal_sample), normal_sample, h)
        q = kde_pvalue(kde_fit(moved), moved, a * h + b)
        assert abs(p - q) <= 2.0 / len(normal_sample)


def test_binned_density_matches_exact():
    x = np.random.default_rng(3).standard_normal(5000)
    kde = kde_fit(x)
    at = np.linspace(-2.5, 2.5, 21)
    np.testing.assert_allclose(kde.pdf(at, method="binned"), kde.pdf(at, method="exact"), rtol=5e-3)
    far = np.array([-30.0, 40.0])
    np.testing.assert_allclose(kde.logpdf(far, method="binned"), kde.logpdf(far, method="exact"))


def test_kde_rejects_bad_samples():
    with pytest.raises(ValueError):
        kde_fit([])
    with pytest.raises(ValueError):
        kde_fit([1.0, np.nan])


def test_constraint_pvalues_cover_every_check(normal_sample):
    cs = ConstraintSet((SummaryConstraint(0, implausible=(4.0, 1.0), plausible=(1.0,)),
                        SummaryConstraint(2, plausible=(0.0,))), labels=("a", "b", "c"))
    out = constraint_pvalues({0: normal_sample, 2: normal_sample + 1.0}, cs)
    assert len(out) == cs.B
    assert [p.label for p in out] == ["a_I1", "a_I2", "a_P1", "c_P1"]
    assert out[1].estimate == out[2].estimate
    assert out[1].kind is Kind.IMPLAUSIBLE and out[2].kind is Kind.PLAUSIBLE
    assert all(p.n == len(normal_sample) for p in out)
    assert out[3].estimate < 0.9


def test_missing_summary_sample_is_structural(normal_sample):
    cs = ConstraintSet((SummaryConstraint(1, plausible=(0.0,)),))
    with pytest.raises(StructuralError):
        constraint_pvalues({0: normal_sample}, cs)


def test_pvalues_for_summary_default_labels(normal_sample):
    out = pvalues_for_summary(normal_sample, SummaryConstraint(1, implausible=(5.0,), alpha=0.1))
    assert out[0].label == "S2_I1"
    assert out[0].alpha == 0.1
    assert out[0].estimate == 0.0


@pytest.fixture(scope="module")
def joint_sample():
    return np.random.default_rng(4).standard_normal((20_000, 2))


def test_joint_check_centre_and_far_point(joint_sample):
    assert joint_density_check(joint_sample, [0.0, 0.0])["pvalue"] > 0.9
    far = joint_density_check(joint_sample, [10.0, 10.0])
    assert far["pvalue"] == 0.0
    assert far["n"] == 20_000


def test_joint_check_matches_the_gaussian_contour(joint_sample):
    out = joint_density_check(joint_sample, [1.96, 0.0])
    assert out["pvalue"] == pytest.approx(np.exp(-1.96 ** 2 / 2), abs=0.02)


def test_joint_check_needs_enough_finite_pairs():
    sample = np.random.default_rng(5).standard_normal((150, 2))
    sample[:60, 1] = np.nan
    with pytest.raises(ValueError):
        kde2d_fit(sample)
    with pytest.raises(ValueError):
        kde2d_fit(np.zeros((200, 3)))
