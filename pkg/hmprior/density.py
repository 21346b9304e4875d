"""
Kernel density estimates and density-ordered prior predictive p-values.

The p-value of a hypothetical value h is the fraction of the sample whose
estimated density does not exceed the density at h, evaluated in-sample.
Large samples are evaluated on a linearly binned grid with an FFT
convolution; small ones exactly.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.signal import fftconvolve
from scipy.special import logsumexp
from scipy.stats import iqr

from hmprior.core import Kind, PValueEstimate
from hmprior.errors import StructuralError

logger = logging.getLogger(__name__)

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
# pairwise kernel evaluations above which the binned evaluator is used
EXACT_MAX_PAIRS = 25_000_000
GRID_STEPS_PER_BANDWIDTH = 16
MAX_GRID_1D = 1 << 18
MAX_GRID_2D = 1 << 20
KERNEL_REACH = 6.0
MIN_JOINT_PAIRS = 100


def silverman_bandwidth(x):
    """0.9 min(sd, IQR / 1.34) n^(-1/5), floored at 1e-9 max(1, |mean|)."""
    x = np.asarray(x, dtype=float)
    sd = np.std(x)
    spread = iqr(x) / 1.34
    a = min(sd, spread) if spread > 0 else sd
    h = 0.9 * a * len(x) ** (-0.2)
    return max(h, 1e-9 * max(1.0, abs(float(np.mean(x)))))


def _exact_logpdf(sample, h, x, chunk=2048):
    out = np.empty(len(x))
    norm = np.log(len(sample)) + np.log(h) + LOG_SQRT_2PI
    for start in range(0, len(x), chunk):
        z = (x[start:start + chunk, None] - sample[None, :]) / h
        out[start:start + chunk] = logsumexp(-0.5 * z ** 2, axis=1) - norm
    return out


def _linear_bin(pos, size):
    """Linear binning weights of fractional grid positions onto ``size`` nodes."""
    i = np.floor(pos).astype(int)
    frac = pos - i
    i = np.clip(i, 0, size - 2)
    return (np.bincount(i, weights=1.0 - frac, minlength=size) +
            np.bincount(i + 1, weights=frac, minlength=size))


def _binned_logpdf(sample, h, x):
    lo = sample.min() - KERNEL_REACH * h
    hi = sample.max() + KERNEL_REACH * h
    step = h / GRID_STEPS_PER_BANDWIDTH
    size = int(np.ceil((hi - lo) / step)) + 1
    if size > MAX_GRID_1D:
        return None
    counts = _linear_bin((sample - lo) / step, size)
    reach = int(np.ceil(KERNEL_REACH * GRID_STEPS_PER_BANDWIDTH))
    offsets = np.arange(-reach, reach + 1) * step / h
    kernel = np.exp(-0.5 * offsets ** 2)
    density = fftconvolve(counts, kernel, mode="same")
    density = np.maximum(density, 1e-300) / (len(sample) * h * np.sqrt(2.0 * np.pi))
    grid = lo + step * np.arange(size)
    out = np.empty(len(x))
    inside = (x >= grid[0]) & (x <= grid[-1])
    out[inside] = np.log(np.interp(x[inside], grid, density))
    if (~inside).any():
        out[~inside] = _exact_logpdf(sample, h, x[~inside])
    return out


@dataclass(frozen=True, eq=False)
class Kde1D:
    """Gaussian kernel density estimate. ``degenerate`` marks a point mass."""
    sample: np.ndarray
    bandwidth: float
    degenerate: bool = False

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")

    @property
    def n(self):
        return len(self.sample)

    def logpdf(self, x, method="auto"):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if method == "binned" or (method == "auto" and self.n * len(x) > EXACT_MAX_PAIRS):
            out = _binned_logpdf(self.sample, self.bandwidth, x)
            if out is not None:
                return out
            logger.debug("binned grid too large for n=%d; evaluating exactly", self.n)
        return _exact_logpdf(self.sample, self.bandwidth, x)

    def pdf(self, x, method="auto"):
        return np.exp(self.logpdf(x, method))


def kde_fit(sample, bandwidth=None):
    """
    Fit a Gaussian KDE with the rule-of-thumb bandwidth.

    An all-identical sample gives a degenerate (point mass) estimate.
    """
    sample = np.asarray(sample, dtype=float).reshape(-1)
    if sample.size == 0:
        raise ValueError("cannot fit a density to an empty sample")
    if not np.all(np.isfinite(sample)):
        raise ValueError("density sample contains non-finite values")
    degenerate = bool(np.ptp(sample) == 0)
    h = silverman_bandwidth(sample) if bandwidth is None else float(bandwidth)
    if degenerate:
        logger.debug("all %d sample values equal %g; point-mass density", sample.size, sample[0])
    return Kde1D(sample, h, degenerate)


def _point_mass_pvalue(kde, h):
    point = kde.sample[0]
    return 1.0 if abs(h - point) <= 1e-12 * max(1.0, abs(point)) else 0.0


def _ordered_pvalues(kde, samples_eval, hs):
    samples_eval = np.asarray(samples_eval, dtype=float).reshape(-1)
    hs = np.asarray(hs, dtype=float).reshape(-1)
    if kde.degenerate:
        return np.array([_point_mass_pvalue(kde, h) for h in hs])
    logs = kde.logpdf(np.concatenate([samples_eval, hs]))
    at_sample, at_h = logs[:len(samples_eval)], logs[len(samples_eval):]
    return np.array([np.mean(at_sample <= lh) for lh in at_h])


def kde_pvalue(kde, samples_eval, h):
    """Fraction of ``samples_eval`` whose log density is at most the log density at ``h``."""
    return float(_ordered_pvalues(kde, samples_eval, [h])[0])


def pvalues_for_summary(samples, constraint, label=None):
    """
    P-value estimates for every hypothetical value of one summary, sharing a single KDE.

    Returns implausible values first, then plausible, as ``ConstraintSet.checks``.
    """
    samples = np.asarray(samples, dtype=float)
    kde = kde_fit(samples)
    hs = list(constraint.implausible) + list(constraint.plausible)
    p = _ordered_pvalues(kde, samples, hs)
    name = label or f"S{constraint.summary + 1}"
    out = []
    for b, h in enumerate(constraint.implausible):
        out.append(PValueEstimate(constraint.summary, h, Kind.IMPLAUSIBLE, float(p[b]), len(samples),
                                  index=b, alpha=constraint.alpha, label=f"{name}_I{b + 1}"))
    offset = len(constraint.implausible)
    for b, h in enumerate(constraint.plausible):
        out.append(PValueEstimate(constraint.summary, h, Kind.PLAUSIBLE, float(p[offset + b]),
                                  len(samples), index=b, alpha=constraint.alpha, label=f"{name}_P{b + 1}"))
    return out


def constraint_pvalues(samples_by_summary, constraints):
    """
    P-value estimates for every check in ``constraints``.

    Parameters
    ----------
    samples_by_summary : mapping of int to array
        Adjusted (or directly simulated) sample per summary index.
    constraints : ConstraintSet

    Returns
    -------
    list of PValueEstimate
    """
    out = []
    for c in constraints.constraints:
        if c.summary not in samples_by_summary:
            raise StructuralError(f"no sample supplied for summary {c.summary}")
        label = constraints.labels[c.summary] if constraints.labels and c.summary < len(constraints.labels) else None
        out.extend(pvalues_for_summary(samples_by_summary[c.summary], c, label))
    return out


def _exact_logpdf2(sample, h, x, chunk=1024):
    out = np.empty(len(x))
    norm = np.log(len(sample)) + np.log(h[0] * h[1]) + 2 * LOG_SQRT_2PI
    for start in range(0, len(x), chunk):
        z = (x[start:start + chunk, None, :] - sample[None, :, :]) / h
        out[start:start + chunk] = logsumexp(-0.5 * np.sum(z ** 2, axis=2), axis=1) - norm
    return out


def _binned_logpdf2(sample, h, x):
    lo = sample.min(axis=0) - KERNEL_REACH * h
    hi = sample.max(axis=0) + KERNEL_REACH * h
    steps_per_h = GRID_STEPS_PER_BANDWIDTH // 2
    step = h / steps_per_h
    sizes = (np.ceil((hi - lo) / step) + 1).astype(int)
    if np.prod(sizes) > MAX_GRID_2D:
        return None
    pos = (sample - lo) / step
    i = np.clip(np.floor(pos).astype(int), 0, sizes - 2)
    f = pos - i
    counts = np.zeros(sizes)
    for di in (0, 1):
        for dj in (0, 1):
            w = (f[:, 0] if di else 1 - f[:, 0]) * (f[:, 1] if dj else 1 - f[:, 1])
            np.add.at(counts, (i[:, 0] + di, i[:, 1] + dj), w)
    reach = int(np.ceil(KERNEL_REACH * steps_per_h))
    k1 = np.exp(-0.5 * (np.arange(-reach, reach + 1) / steps_per_h) ** 2)
    density = fftconvolve(counts, np.outer(k1, k1), mode="same")
    density = np.maximum(density, 1e-300) / (len(sample) * h[0] * h[1] * 2.0 * np.pi)
    axes = [lo[a] + step[a] * np.arange(sizes[a]) for a in range(2)]
    interp = RegularGridInterpolator(axes, np.log(density), bounds_error=False, fill_value=None)
    inside = np.all((x >= lo) & (x <= lo + step * (sizes - 1)), axis=1)
    out = np.empty(len(x))
    out[inside] = interp(x[inside])
    if (~inside).any():
        out[~inside] = _exact_logpdf2(sample, h, x[~inside])
    return out


@dataclass(frozen=True, eq=False)
class Kde2D:
    """Product-Gaussian KDE with a diagonal bandwidth matrix."""
    sample: np.ndarray
    bandwidths: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.bandwidths) <= 0):
            raise ValueError("bandwidths must be positive")

    @property
    def n(self):
        return len(self.sample)

    def logpdf(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        h = np.asarray(self.bandwidths, dtype=float)
        if self.n * len(x) > EXACT_MAX_PAIRS // 4:
            out = _binned_logpdf2(self.sample, h, x)
            if out is not None:
                return out
        return _exact_logpdf2(self.sample, h, x)

    def pdf(self, x):
        return np.exp(self.logpdf(x))


def kde2d_fit(sample):
    sample = np.asarray(sample, dtype=float)
    if sample.ndim != 2 or sample.shape[1] != 2:
        raise ValueError("joint sample must have shape (n, 2)")
    sample = sample[np.all(np.isfinite(sample), axis=1)]
    if len(sample) < MIN_JOINT_PAIRS:
        raise ValueError(f"joint check needs at least {MIN_JOINT_PAIRS} finite pairs, got {len(sample)}")
    h = np.array([silverman_bandwidth(sample[:, 0]), silverman_bandwidth(sample[:, 1])])
    return Kde2D(sample, h)


def joint_density_check(samples2d, point):
    """
    Density-ordered p-value of ``point`` in the joint predictive of two summaries.

    Returns
    -------
    dict
        ``density`` at the point, ``pvalue`` (fraction of samples whose
        density is not above it) and ``n``.
    """
    kde = kde2d_fit(samples2d)
    point = np.asarray(point, dtype=float).reshape(1, 2)
    logs = kde.logpdf(np.vstack([kde.sample, point]))
    at_sample, at_point = logs[:-1], logs[-1]
    return {"density": float(np.exp(at_point)),
            "pvalue": float(np.mean(at_sample <= at_point)),
            "n": int(kde.n),
            "bandwidths": kde.bandwidths.tolist()}
