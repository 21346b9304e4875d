from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from hmprior.core import HyperBox
from hmprior.emulator import HETEROSCEDASTIC, adjusted_samples, emulate_summaries, fit_local
from hmprior.models import LinearGaussianModel
from hmprior.simbank import build_bank


def test_noiseless_linear_bank_is_recovered(affine_model, unit_box):
    bank = build_bank(affine_model, unit_box, 2000, seed=0)
    fit = fit_local(bank, unit_box.point([0.5]), 0, 200)
    np.testing.assert_allclose(fit.coefficients(), [2.0, 3.0], atol=1e-10)
    target = unit_box.point([0.3])
    adj = adjusted_samples(fit_local(bank, target, 0, 200), bank, target)
    np.testing.assert_allclose(adj, 2.9, atol=1e-10)


def test_constant_model_adjusts_to_constant(bank_factory):
    rng = np.random.default_rng(0)
    bank = bank_factory(rng.uniform(size=(300, 2)), np.full(300, 7.0))
    target = HyperBox(lower=[0.0, 0.0], upper=[1.0, 1.0]).point([0.2, 0.7])
    for mode in ("homoscedastic", HETEROSCEDASTIC):
        fit = fit_local(bank, target, 0, 100, mode)
        np.testing.assert_allclose(adjusted_samples(fit, bank, target), 7.0, atol=1e-12)
    assert fit.zero_residuals


def test_adjustment_is_identity_at_a_training_point(gaussian_bank, unit_box):
    row = 123
    target = unit_box.point(gaussian_bank.lambdas[row])
    fit = fit_local(gaussian_bank, target, 0, 500)
    pos = int(np.flatnonzero(fit.neighbors == row)[0])
    adj = adjusted_samples(fit, gaussian_bank, target)
    assert adj[pos] == pytest.approx(gaussian_bank.summaries[row, 0], abs=1e-12)


def test_homoscedastic_adjustment_preserves_residuals(gaussian_bank, unit_box):
    target = unit_box.point([0.4])
    fit = fit_local(gaussian_bank, target, 0, 1000)
    adj = adjusted_samples(fit, gaussian_bank, target)
    assert len(adj) == 1000
    np.testing.assert_allclose(adj - fit.mean(target.values)[0], fit.residuals, atol=1e-12)


def test_slope_within_three_standard_errors(gaussian_bank, unit_box):
    target = unit_box.point([0.5])
    fit = fit_local(gaussian_bank, target, 0, 10_000)
    x = gaussian_bank.lambdas[fit.neighbors, 0]
    w = fit.weights
    xc = x - np.sum(w * x) / np.sum(w)
    se = 0.5 * np.sqrt(np.sum(w ** 2 * xc ** 2)) / np.sum(w * xc ** 2)
    assert abs(fit.coefficients()[1] - 2.0) < 3 * se


def test_log_variance_slope(scale_noise_model):
    box = HyperBox(lower=[0.0], upper=[2.0])
    bank = build_bank(scale_noise_model, box, 20_000, seed=4)
    fit = fit_local(bank, box.point([1.0]), 0, 20_000, HETEROSCEDASTIC)
    assert fit.logvar_coef[1] == pytest.approx(2.0, abs=0.15)
    assert not fit.zero_residuals


@pytest.mark.parametrize("mode", ["homoscedastic", HETEROSCEDASTIC])
def test_adjustment_is_affine_equivariant(gaussian_bank, unit_box, mode):
    u, v = -2.5, 4.0
    moved = replace(gaussian_bank, summaries=u * gaussian_bank.summaries + v)
    target = unit_box.point([0.6])
    base = adjusted_samples(fit_local(gaussian_bank, target, 0, 800, mode), gaussian_bank, target)
    other = adjusted_samples(fit_local(moved, target, 0, 800, mode), moved, target)
    np.testing.assert_allclose(other, u * base + v, rtol=1e-8, atol=1e-8)


def test_adjusted_samples_match_the_analytic_predictive():
    model = LinearGaussianModel(a=1.0, b=2.0, c=0.5)
    box = HyperBox(lower=[0.0], upper=[1.0])
    bank = build_bank(model, box, 50_000, seed=21)
    targets = np.random.default_rng(5).uniform(0.05, 0.95, size=10)
    passes = 0
    for t in targets:
        target = box.point([t])
        adj = emulate_summaries(bank, target, [0], 1000)[0]
        passes += stats.kstest(adj, stats.norm(loc=model.mean(t), scale=0.5).cdf).pvalue >= 0.01
    assert passes >= 9


def test_adjustment_beats_the_raw_window():
    model = LinearGaussianModel(a=0.0, b=10.0, c=0.5)
    box = HyperBox(lower=[0.0], upper=[1.0])
    bank = build_bank(model, box, 5000, seed=2)
    target = box.point([0.5])
    fit = fit_local(bank, target, 0, 1000)
    raw = bank.summaries[fit.neighbors, 0]
    adj = adjusted_samples(fit, bank, target)
    truth = stats.norm(loc=model.mean(0.5), scale=0.5).cdf
    assert stats.kstest(adj, truth).statistic < stats.kstest(raw, truth).statistic


def test_rank_deficient_design_is_flagged(bank_factory):
    rng = np.random.default_rng(3)
    x = rng.uniform(size=200)
    lambdas = np.column_stack([x, np.full(200, 0.5)])
    bank = bank_factory(lambdas, 1.0 + x + 0.01 * rng.normal(size=200), mad=[0.25, 1.0])
    target = HyperBox(lower=[0.0, 0.0], upper=[1.0, 1.0]).point([0.5, 0.5])
    fit = fit_local(bank, target, 0, 100)
    assert fit.rank_deficient
    assert fit.coefficients()[1] == pytest.approx(1.0, abs=0.1)
    assert np.all(np.isfinite(adjusted_samples(fit, bank, target)))


def test_neighbourhood_must_be_large_enough(gaussian_bank, unit_box):
    with pytest.raises(ValueError):
        fit_local(gaussian_bank, unit_box.point([0.5]), 0, 5)
