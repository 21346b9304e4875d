"""
Built-in generative models: prior x data model -> summary statistics.

Every model is a pure function of (lambda, seed). ``seed`` is any entropy
accepted by ``numpy.random.SeedSequence`` (an int or a sequence of ints).
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import median_abs_deviation

from hmprior.core import SummaryVector

logger = logging.getLogger(__name__)

# Log doses of the four-level toxicity experiment, before standardization.
DEFAULT_LOG_DOSES = (-0.86, -0.30, -0.05, 0.73)
MAD_TO_SD = 1.4826
HUBER_C = 1.345


class ModelSpec:
    """
    Base class for generative models.

    Subclasses implement ``simulate(natural, seed) -> ndarray (J,)``. Models
    that can vectorize over many hyperparameter rows set ``vectorized = True``
    and override ``simulate_many``.
    """
    name = "model"
    vectorized = False

    def __init__(self, d, J, labels, param_names):
        self.d = int(d)
        self.J = int(J)
        self.labels = tuple(labels)
        self.param_names = tuple(param_names)
        if len(self.labels) != self.J or len(self.param_names) != self.d:
            raise ValueError("labels and parameter names must match J and d")

    def simulate(self, natural, seed):
        raise NotImplementedError

    def simulate_summaries(self, point, seed):
        """Summaries for a HyperPoint (search coordinates are mapped to the natural scale)."""
        return SummaryVector(self.simulate(point.natural(), seed))

    def simulate_many(self, naturals, seeds):
        return np.array([self.simulate(row, s) for row, s in zip(naturals, seeds)], dtype=float)

    def describe(self):
        return {"name": self.name, "d": self.d, "J": self.J,
                "labels": list(self.labels), "parameters": list(self.param_names)}


class BinomialModel(ModelSpec):
    """
    Expository model: beta ~ N(0, sigma_beta^2), p = logistic(beta),
    y ~ Binomial(n, p); summary S = p_hat (1 - p_hat) / n.
    """
    name = "binomial"

    def __init__(self, n=20):
        if n < 1:
            raise ValueError("the number of trials must be at least 1")
        super().__init__(1, 1, ("pvar",), ("sigma_beta",))
        self.n = int(n)

    def simulate(self, natural, seed):
        rng = np.random.default_rng(seed)
        beta = rng.normal(0.0, natural[0])
        y = rng.binomial(self.n, expit(beta))
        p_hat = y / self.n
        return np.array([p_hat * (1.0 - p_hat) / self.n])

    def describe(self):
        return {**super().describe(), "trials": self.n}


def standardize_doses(log_doses):
    x = np.asarray(log_doses, dtype=float)
    return (x - x.mean()) / x.std(ddof=1)


def penalized_logistic_mode(Y, x, trials, prior_var=100.0, max_iter=100, tol=1e-10):
    """
    Posterior mode of (beta0, beta1) under independent N(0, prior_var) priors,
    for many binomial response rows at once.

    Damped Newton iteration on the strictly concave penalized log-likelihood.

    Parameters
    ----------
    Y : ndarray (n, k)
        Successes at each of the k design points, one row per data set.
    x : ndarray (k,)
    trials : int
    prior_var : float

    Returns
    -------
    beta : ndarray (n, 2)
    converged : ndarray of bool (n,)
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = len(Y)
    D = np.column_stack([np.ones_like(x), x])

    def objective(beta, rows):
        eta = beta @ D.T
        return np.sum(Y[rows] * eta - trials * np.logaddexp(0.0, eta), axis=1) - np.sum(beta ** 2, axis=1) / (2 * prior_var)

    beta = np.zeros((n, 2))
    value = objective(beta, np.arange(n))
    converged = np.zeros(n, dtype=bool)
    eye = np.eye(2) / prior_var
    for _ in range(max_iter):
        active = ~converged
        if not active.any():
            break
        b = beta[active]
        p = expit(b @ D.T)
        grad = (Y[active] - trials * p) @ D - b / prior_var
        w = trials * p * (1.0 - p)
        info = np.einsum("ni,ij,ik->njk", w, D, D) + eye
        step = np.linalg.solve(info, grad[..., None])[..., 0]
        scale = np.ones(len(b))
        base = value[active]
        idx = np.flatnonzero(active)
        candidate = b + step
        cand_value = objective(candidate, idx)
        for _ in range(40):
            worse = cand_value < base - 1e-12 * np.abs(base)
            if not worse.any():
                break
            scale[worse] *= 0.5
            candidate[worse] = b[worse] + scale[worse, None] * step[worse]
            cand_value[worse] = objective(candidate[worse], idx[worse])
        beta[idx] = candidate
        value[idx] = cand_value
        done = np.max(np.abs(scale[:, None] * step), axis=1) < tol * (1.0 + np.max(np.abs(candidate), axis=1))
        converged[idx[done]] = True
    return beta, converged


def binomial_variance_summary(p_hat, trials):
    """Sum of binomial variances m p (1 - p) over the dose levels (last axis)."""
    p_hat = np.asarray(p_hat, dtype=float)
    return np.sum(trials * p_hat * (1.0 - p_hat), axis=-1)


class LogisticDoseModel(ModelSpec):
    """
    Dose-response model with independent Cauchy priors on the logistic
    coefficients: beta0 ~ Cauchy(0, lambda1), beta1 ~ Cauchy(0, lambda2),
    y_i ~ Binomial(5, logistic(beta0 + beta1 x_i)).

    The summary is the sum of binomial variances at the penalized posterior
    mode, ``S1 = sum_i m p_i (1 - p_i)``.
    """
    name = "logistic"
    vectorized = True

    def __init__(self, doses=None, trials=5, prior_var=100.0, standardize=True):
        super().__init__(2, 1, ("S1",), ("lambda1", "lambda2"))
        raw = DEFAULT_LOG_DOSES if doses is None else doses
        if len(raw) < 2:
            raise ValueError("the dose design needs at least two levels")
        self.x = standardize_doses(raw) if standardize else np.asarray(raw, dtype=float)
        self.trials = int(trials)
        self.prior_var = float(prior_var)

    def _responses(self, natural, seed):
        rng = np.random.default_rng(seed)
        beta0 = natural[0] * rng.standard_cauchy()
        beta1 = natural[1] * rng.standard_cauchy()
        with np.errstate(over="ignore"):
            p = expit(beta0 + beta1 * self.x)
        return rng.binomial(self.trials, p)

    def summary_from_responses(self, Y):
        beta, converged = penalized_logistic_mode(Y, self.x, self.trials, self.prior_var)
        p_hat = expit(beta @ np.column_stack([np.ones_like(self.x), self.x]).T)
        S = binomial_variance_summary(p_hat, self.trials)
        if not converged.all():
            logger.warning("penalized Newton did not converge for %d rows", int((~converged).sum()))
        return np.where(converged, S, np.nan)

    def simulate(self, natural, seed):
        return self.summary_from_responses(self._responses(natural, seed)[None, :])

    def simulate_many(self, naturals, seeds):
        Y = np.array([self._responses(row, s) for row, s in zip(naturals, seeds)])
        return self.summary_from_responses(Y)[:, None]

    def describe(self):
        return {**super().describe(), "doses": self.x.tolist(), "trials": self.trials}


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Predictor matrix with every column centered and scaled to unit sd (ddof=1)."""
    X: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("a design matrix needs at least two rows")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)

    @classmethod
    def from_raw(cls, raw):
        raw = np.asarray(raw, dtype=float)
        sd = raw.std(axis=0, ddof=1)
        if np.any(sd == 0):
            raise ValueError("design matrix has constant columns")
        return cls((raw - raw.mean(axis=0)) / sd)

    @classmethod
    def from_csv(cls, path):
        return cls.from_raw(pd.read_csv(path).to_numpy(dtype=float))

    def to_csv(self, path):
        frame = pd.DataFrame(self.X, columns=[f"x{e + 1}" for e in range(self.E)])
        frame.to_csv(path, index=False, lineterminator="\r\n", float_format="%.17g")
        return Path(path)

    @property
    def M(self):
        return self.X.shape[0]

    @property
    def E(self):
        return self.X.shape[1]


def synth_design(M, E, seed, rho=0.5):
    """Synthetic standard-normal design with AR(1) correlation ``rho`` across columns."""
    if M < 2:
        raise ValueError("synthetic design needs M >= 2")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((M, E))
    X = np.empty_like(Z)
    X[:, 0] = Z[:, 0]
    innovation = np.sqrt(1.0 - rho ** 2)
    for e in range(1, E):
        X[:, e] = rho * X[:, e - 1] + innovation * Z[:, e]
    return DesignMatrix.from_raw(X)


def huber_fit(A, y, c=HUBER_C, max_iter=50, tol=1e-8):
    """
    Huber M-estimate by iteratively reweighted least squares.

    Returns (coefficients, residuals, weights). The residual scale is
    re-estimated each iteration from the normalized MAD.
    """
    coef = np.linalg.lstsq(A, y, rcond=None)[0]
    w = np.ones(len(y))
    for _ in range(max_iter):
        r = y - A @ coef
        s = MAD_TO_SD * median_abs_deviation(r)
        if s <= 0:
            break
        u = np.abs(r) / s
        w = np.where(u <= c, 1.0, c / np.maximum(u, 1e-300))
        sw = np.sqrt(w)
        new = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)[0]
        if np.max(np.abs(new - coef)) <= tol * (1.0 + np.max(np.abs(coef))):
            coef = new
            break
        coef = new
    return coef, y - A @ coef, w


def sample_kurtosis(r, excess=False):
    """m4 / m2^2 of the centered values (minus 3 when ``excess``)."""
    r = np.asarray(r, dtype=float)
    c = r - r.mean()
    m2 = np.mean(c ** 2)
    if m2 <= 0:
        return np.nan
    k = np.mean(c ** 4) / m2 ** 2
    return k - 3.0 if excess else k


def _adjusted_r2(y, fitted, weights, p):
    n = len(y)
    ybar = np.sum(weights * y) / np.sum(weights)
    tss = np.sum(weights * (y - ybar) ** 2)
    rss = np.sum(weights * (y - fitted) ** 2)
    if tss <= 0 or n - p - 1 <= 0:
        return np.nan
    r2 = 1.0 - rss / tss
    return 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)


def _abs_correlations(Xh, yh):
    Xc = Xh - Xh.mean(axis=0)
    yc = yh - yh.mean()
    denom = np.linalg.norm(Xc, axis=0) * np.linalg.norm(yc)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.abs(Xc.T @ yc) / denom
    return np.nan_to_num(corr, nan=0.0)


def _half_fit(Xh, yh, columns, robust):
    A = np.column_stack([np.ones(len(yh)), Xh[:, columns]])
    if robust:
        coef, resid, w = huber_fit(A, yh)
    else:
        coef = np.linalg.lstsq(A, yh, rcond=None)[0]
        resid = yh - A @ coef
        w = np.ones(len(yh))
    return _adjusted_r2(yh, A @ coef, w, len(columns)), resid


def refitted_cv(y, X, splits, rng, robust=False, excess=False, max_redraws=10):
    """
    Refitted cross-validation over random halvings.

    Returns (mean adjusted R^2, mean residual kurtosis, redraw flag).
    """
    y = np.asarray(y, dtype=float)
    Xm = X.X if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    M = len(y)
    if M < 8:
        raise ValueError("refitted cross-validation needs M >= 8")
    top = M // 4
    r2s, kurts = [], []
    redrawn = False
    for _ in range(splits):
        for _attempt in range(max_redraws):
            perm = rng.permutation(M)
            h1, h2 = perm[:M // 2], perm[M // 2:]
            if np.ptp(y[h1]) > 0 and np.ptp(y[h2]) > 0:
                break
            redrawn = True
        else:
            logger.debug("constant response half after %d redraws", max_redraws)
            return np.nan, np.nan, True
        c1 = _abs_correlations(Xm[h1], y[h1])
        c2 = _abs_correlations(Xm[h2], y[h2])
        sel1 = np.argsort(-c1, kind="stable")[:top]
        sel2 = np.argsort(-c2, kind="stable")[:top]
        r2_1, res1 = _half_fit(Xm[h1], y[h1], sel2, robust)
        r2_2, res2 = _half_fit(Xm[h2], y[h2], sel1, robust)
        r2s.append(0.5 * (r2_1 + r2_2))
        kurts.append(0.5 * (sample_kurtosis(res1, excess) + sample_kurtosis(res2, excess)))
    return float(np.mean(r2s)), float(np.mean(kurts)), redrawn


def refitted_cv_r2(y, X, splits, seed, robust=False):
    """
    Adjusted R^2 by refitted cross-validation.

    Each split halves the rows, ranks columns by absolute Pearson correlation
    within each half, fits each half on the floor(M/4) columns chosen by the
    other half, and averages the two adjusted R^2 values. The result is the
    mean over ``splits`` random splits.
    """
    r2, _, _ = refitted_cv(y, X, splits, np.random.default_rng(seed), robust=robust)
    return r2


@dataclass(frozen=True)
class ShrinkagePriorConfig:
    sigma0: float = 10.0
    A_sigma: float = 1.0
    A_beta: float = 0.01
    A_delta: float = 0.01
    prior_kind: str = "horseshoe_plus"
    outliers_enabled: bool = False
    robust: bool = None
    excess_kurtosis: bool = False

    def __post_init__(self):
        for name in ("sigma0", "A_sigma", "A_beta", "A_delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.prior_kind not in ("horseshoe_plus", "normal"):
            raise ValueError(f"unknown prior kind '{self.prior_kind}'")


def _half_cauchy(rng, scale, size=None):
    return scale * np.abs(rng.standard_cauchy(size))


class ShrinkageModel(ModelSpec):
    """
    Sparse linear model y = beta0 1 + X beta + delta + eps with a horseshoe+
    (or normal) prior on beta and optional mean-shift outlier terms.

    Without outliers the free hyperparameters are (A_sigma, A_beta) and the
    summaries are (log s^2, refitted-CV adjusted R^2). With outliers all four
    scales are free and two more summaries are added: log |median(y)| and the
    log residual kurtosis from the refitted-CV fits.
    """
    name = "shrinkage"
    STREAMS = ("noise", "intercept", "beta", "delta", "splits")

    def __init__(self, X, cfg=None, splits=10):
        cfg = cfg or ShrinkagePriorConfig()
        if splits < 1:
            raise ValueError("splits must be at least 1")
        self.design = X
        self.cfg = cfg
        self.splits = int(splits)
        self.robust = cfg.outliers_enabled if cfg.robust is None else bool(cfg.robust)
        if cfg.outliers_enabled:
            super().__init__(4, 4, ("log_scale", "cv_r2", "log_abs_median", "log_kurtosis"),
                             ("sigma0", "A_sigma", "A_beta", "A_delta"))
        else:
            super().__init__(2, 2, ("log_scale", "cv_r2"), ("A_sigma", "A_beta"))

    def hyperparameters(self, natural):
        values = {"sigma0": self.cfg.sigma0, "A_sigma": self.cfg.A_sigma,
                  "A_beta": self.cfg.A_beta, "A_delta": self.cfg.A_delta}
        values.update(zip(self.param_names, (float(v) for v in natural)))
        return values

    def simulate_response(self, natural, seed):
        """Draw one response vector; each prior component has its own substream."""
        hp = self.hyperparameters(natural)
        M, E = self.design.M, self.design.E
        streams = dict(zip(self.STREAMS, (np.random.default_rng(s) for s in
                                          np.random.SeedSequence(seed).spawn(len(self.STREAMS)))))
        noise = streams["noise"]
        sigma = _half_cauchy(noise, hp["A_sigma"])
        eps = sigma * noise.standard_normal(M)
        beta0 = hp["sigma0"] * streams["intercept"].standard_normal()

        g = streams["beta"]
        if self.cfg.prior_kind == "horseshoe_plus":
            gamma = _half_cauchy(g, 1.0, E)
            scales = _half_cauchy(g, hp["A_beta"] * gamma)
            beta = scales * g.standard_normal(E)
        else:
            beta = np.sqrt(hp["A_beta"]) * g.standard_normal(E)

        delta = 0.0
        if self.cfg.outliers_enabled:
            o = streams["delta"]
            zeta = _half_cauchy(o, 1.0, M)
            tau = _half_cauchy(o, hp["A_delta"] * zeta)
            delta = tau * o.standard_normal(M)
        with np.errstate(over="ignore", invalid="ignore"):
            y = beta0 + self.design.X @ beta + delta + eps
        return y, streams["splits"]

    def summaries_from_response(self, y, split_rng):
        if not np.all(np.isfinite(y)):
            return np.full(self.J, np.nan)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if self.robust:
                log_scale = np.log((MAD_TO_SD * median_abs_deviation(y)) ** 2)
            else:
                log_scale = np.log(np.var(y, ddof=1))
            r2, kurt, _ = refitted_cv(y, self.design, self.splits, split_rng, robust=self.robust,
                                      excess=self.cfg.excess_kurtosis)
            out = [log_scale, r2]
            if self.cfg.outliers_enabled:
                out.append(np.log(np.abs(np.median(y))))
                out.append(np.log(kurt) if kurt > 0 else np.nan)
        out = np.array(out, dtype=float)
        out[~np.isfinite(out)] = np.nan
        return out

    def simulate(self, natural, seed):
        y, split_rng = self.simulate_response(natural, seed)
        return self.summaries_from_response(y, split_rng)

    def describe(self):
        return {**super().describe(), "prior_kind": self.cfg.prior_kind,
                "outliers_enabled": self.cfg.outliers_enabled, "robust": self.robust,
                "splits": self.splits, "M": self.design.M, "E": self.design.E}


class LinearGaussianModel(ModelSpec):
    """S | lambda ~ N(a + b lambda, c^2); an analytic predictive for testing."""
    name = "linear_gaussian"

    def __init__(self, a=0.0, b=1.0, c=1.0):
        if not c > 0:
            raise ValueError("c must be positive")
        super().__init__(1, 1, ("S1",), ("lambda",))
        self.a, self.b, self.c = float(a), float(b), float(c)

    def mean(self, lam):
        return self.a + self.b * lam

    def simulate(self, natural, seed):
        rng = np.random.default_rng(seed)
        return np.array([self.mean(natural[0]) + self.c * rng.standard_normal()])

    def describe(self):
        return {**super().describe(), "a": self.a, "b": self.b, "c": self.c}


def binomial_model(n=20):
    return BinomialModel(n)


def logistic_model(doses=None, **kwargs):
    return LogisticDoseModel(doses, **kwargs)


def shrinkage_model(X, cfg=None, splits=10):
    return ShrinkageModel(X, cfg, splits)


def linear_gaussian_model(a=0.0, b=1.0, c=1.0):
    return LinearGaussianModel(a, b, c)


def _build_shrinkage(params):
    params = dict(params)
    design = params.pop("design", {}) or {}
    if "csv" in design:
        X = DesignMatrix.from_csv(design["csv"])
    else:
        X = synth_design(int(design.get("M", 125)), int(design.get("E", 700)),
                         int(design.get("seed", 2024)), float(design.get("rho", 0.5)))
    splits = int(params.pop("splits", 10))
    return shrinkage_model(X, ShrinkagePriorConfig(**params), splits)


MODEL_BUILDERS = {
    "binomial": lambda p: binomial_model(**p),
    "logistic": lambda p: logistic_model(**p),
    "shrinkage": _build_shrinkage,
    "linear_gaussian": lambda p: linear_gaussian_model(**p),
}


def build_model(name, params=None):
    """Instantiate a built-in model by name from a parameter mapping."""
    if name not in MODEL_BUILDERS:
        raise KeyError(f"unknown model '{name}'; choose from {sorted(MODEL_BUILDERS)}")
    return MODEL_BUILDERS[name](dict(params or {}))
