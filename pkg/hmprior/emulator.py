"""
Regression-adjusted conditional sampling on the simulation bank.

For a target lambda* and summary j the k nearest bank rows are fitted with a
locally weighted linear model for the mean (and optionally the log variance).
Their residuals are then moved to lambda*:

    S_hat_i = mu(lambda*) + sigma(lambda*) / sigma(lambda_i) * (S_i - mu(lambda_i))
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from hmprior.simbank import nearest

logger = logging.getLogger(__name__)

HOMOSCEDASTIC = "homoscedastic"
HETEROSCEDASTIC = "heteroscedastic"
EPS = np.finfo(float).eps
ZERO_RESIDUAL_TOL = 1e3 * EPS


@dataclass(frozen=True, eq=False)
class RegressionFit:
    """
    Local mean / log-variance fit for one summary around one target.

    Coefficients are stored for the design ``[1, lambda - center]`` so the
    intercept is the fitted value at the target. ``coefficients()`` converts
    them to the uncentred form.
    """
    summary: int
    neighbors: np.ndarray
    center: np.ndarray
    mean_coef: np.ndarray
    logvar_coef: np.ndarray
    weights: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    mode: str = HOMOSCEDASTIC
    rank_deficient: bool = False
    zero_residuals: bool = False

    @property
    def k(self):
        return len(self.neighbors)

    def _design(self, lams):
        lams = np.atleast_2d(np.asarray(lams, dtype=float))
        return np.column_stack([np.ones(len(lams)), lams - self.center])

    def mean(self, lams):
        return self._design(lams) @ self.mean_coef

    def sigma(self, lams):
        if self.mode == HOMOSCEDASTIC:
            return np.ones(len(np.atleast_2d(lams)))
        return np.exp(0.5 * (self._design(lams) @ self.logvar_coef))

    def coefficients(self):
        """Mean coefficients (intercept, slopes) for the design ``[1, lambda]``."""
        slopes = self.mean_coef[1:]
        return np.concatenate([[self.mean_coef[0] - self.center @ slopes], slopes])


def epanechnikov_weights(dist):
    """1 - (dist / max dist)^2, clipped at zero; all ones when every distance is zero."""
    reach = dist.max()
    if reach <= 0:
        return np.ones_like(dist)
    return np.clip(1.0 - (dist / reach) ** 2, 0.0, None)


def weighted_lstsq(A, y, w, rtol=1e-10):
    """
    Weighted least squares with collinear columns dropped by pivoted QR.

    Returns (coefficients, rank_deficient). Dropped columns get coefficient 0.
    """
    sw = np.sqrt(w)
    Aw, yw = A * sw[:, None], y * sw
    _, R, piv = scipy.linalg.qr(Aw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rtol * diag[0])) if diag.size and diag[0] > 0 else 0
    coef = np.zeros(A.shape[1])
    if rank == 0:
        return coef, True
    keep = np.sort(piv[:rank])
    coef[keep] = np.linalg.lstsq(Aw[:, keep], yw, rcond=None)[0]
    return coef, rank < A.shape[1]


def fit_local(bank, target, j, k, mode=HOMOSCEDASTIC):
    """
    Fit the local regression for summary ``j`` around ``target``.

    Parameters
    ----------
    bank : SimulationBank
    target : HyperPoint
    j : int
        Summary index.
    k : int
        Neighbourhood size, at least 2 (d + 2).
    mode : {"homoscedastic", "heteroscedastic"}

    Returns
    -------
    RegressionFit
    """
    if mode not in (HOMOSCEDASTIC, HETEROSCEDASTIC):
        raise ValueError(f"unknown regression mode '{mode}'")
    d = bank.d
    if k < 2 * (d + 2):
        raise ValueError(f"k={k} is below the minimum 2(d+2)={2 * (d + 2)} neighbours")
    idx = nearest(bank, target, k, summary=j)
    center = np.asarray(target.values, dtype=float)
    lams = bank.lambdas[idx]
    y = bank.summaries[idx, j]
    dist = np.sqrt(np.sum(((lams - center) / bank.mad) ** 2, axis=1))
    w = epanechnikov_weights(dist)

    A = np.column_stack([np.ones(k), lams - center])
    mean_coef, deficient = weighted_lstsq(A, y, w)
    fitted = A @ mean_coef
    resid = y - fitted
    if deficient:
        logger.warning("rank-deficient local design for summary %d at %s; collinear columns dropped",
                       j, center)

    logvar_coef = np.zeros(d + 1)
    zero = False
    if mode == HETEROSCEDASTIC:
        scale = max(1.0, float(np.max(np.abs(y))))
        floor = (EPS * scale) ** 2
        if np.max(np.abs(resid)) <= ZERO_RESIDUAL_TOL * scale:
            zero = True
            logvar_coef[0] = np.log(floor)
            logger.warning("all residuals vanish for summary %d; sigma fixed at the floor", j)
        else:
            logvar_coef, lv_deficient = weighted_lstsq(A, np.log(np.maximum(resid ** 2, floor)), w)
            deficient = deficient or lv_deficient

    return RegressionFit(summary=j, neighbors=idx, center=center, mean_coef=mean_coef,
                         logvar_coef=logvar_coef, weights=w, fitted=fitted, residuals=resid,
                         mode=mode, rank_deficient=deficient, zero_residuals=zero)


def adjusted_samples(fit, bank, target):
    """Approximate draws from p(S^j | target): one adjusted value per neighbour."""
    lams = bank.lambdas[fit.neighbors]
    S = bank.summaries[fit.neighbors, fit.summary]
    t = np.asarray(target.values, dtype=float)
    mu_t = fit.mean(t)[0]
    if fit.mode == HOMOSCEDASTIC:
        return mu_t + (S - fit.mean(lams))
    return mu_t + fit.sigma(t)[0] / fit.sigma(lams) * (S - fit.mean(lams))


def emulate_summaries(bank, target, summaries, k, mode=HOMOSCEDASTIC):
    """Adjusted samples keyed by summary index."""
    out = {}
    for j in summaries:
        fit = fit_local(bank, target, j, k, mode)
        out[j] = adjusted_samples(fit, bank, target)
    return out
