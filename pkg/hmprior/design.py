"""
Space-filling initialization and wave-to-wave perturbation over the box.

All points are produced in search coordinates.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import qmc

logger = logging.getLogger(__name__)


def lhs_maximin(box, r, seed, restarts=100):
    """
    Maximin Latin hypercube design.

    Draws ``restarts`` random Latin hypercubes and keeps the one whose
    smallest pairwise Euclidean distance (in search coordinates) is largest.

    Parameters
    ----------
    box : HyperBox
    r : int
        Number of design points, at least 2.
    seed : int or sequence of int
    restarts : int

    Returns
    -------
    list of HyperPoint
    """
    if r < 2:
        raise ValueError(f"a design needs r >= 2 points, got {r}")
    widths = box.widths
    if np.any(widths <= 0):
        raise ValueError("degenerate box: every coordinate needs positive width")

    rng = np.random.default_rng(seed)
    sampler = qmc.LatinHypercube(d=box.d, scramble=True, seed=rng)
    best, best_score = None, -np.inf
    for _ in range(max(1, int(restarts))):
        unit = sampler.random(r)
        score = pdist(unit * widths).min()
        if score > best_score:
            best, best_score = unit, score
    points = qmc.scale(best, box.search_lower, box.search_upper)
    logger.debug("maximin LHS: r=%d restarts=%d min distance %.4g", r, restarts, best_score)
    return [box.point(p) for p in points]


def bandwidth(d, Q, multiplier=1.0):
    """Perturbation bandwidth h = (4 / ((2d + 1) Q)) ** (1 / (d + 4)), times ``multiplier``."""
    return multiplier * (4.0 / ((2 * d + 1) * Q)) ** (1.0 / (d + 4))


@dataclass(frozen=True, eq=False)
class PerturbationKernel:
    Q: int
    d: int
    V: np.ndarray
    h: float
    fallback: str = ""

    @property
    def Sigma(self):
        return self.h ** 2 * self.V

    @classmethod
    def from_wave(cls, box, wave_points, Q, multiplier=1.0, jitter=1e-10):
        """
        Kernel for the next wave.

        ``V`` is the sample covariance of all current-wave points. With fewer
        than d + 1 survivors it falls back to the squared half-widths of the
        box; a singular covariance falls back to its diagonal plus jitter.
        """
        d = box.d
        h = bandwidth(d, Q, multiplier)
        X = np.array([p.values for p in wave_points], dtype=float)
        half_widths = box.widths / 2.0
        if Q < d + 1 or len(X) < 2:
            logger.warning("only %d survivors for d=%d; using box half-widths for the kernel", Q, d)
            return cls(Q, d, np.diag(half_widths ** 2), h, fallback="box")
        V = np.atleast_2d(np.cov(X, rowvar=False))
        if np.linalg.matrix_rank(V) < d:
            diag = np.diag(V).copy()
            scale = jitter * np.maximum(half_widths ** 2, 1.0)
            logger.warning("singular wave covariance; falling back to its diagonal plus jitter")
            return cls(Q, d, np.diag(diag + scale), h, fallback="diagonal")
        return cls(Q, d, V, h)


def _sym_factor(S, inverse=False):
    vals, vecs = np.linalg.eigh(S)
    vals = np.clip(vals, 0.0, None)
    if inverse:
        if np.any(vals <= vals.max() * 1e-14):
            raise np.linalg.LinAlgError("matrix is numerically singular")
        return (vecs / np.sqrt(vals)) @ vecs.T
    return (vecs * np.sqrt(vals)) @ vecs.T


def exact_covariance_batch(center, Sigma, m, rng):
    """
    Draw ``m`` normal vectors whose sample mean is ``center`` and whose sample
    covariance (ddof=1) is exactly ``Sigma``.

    Needs ``m >= d + 1``; smaller batches are returned as plain draws.
    """
    center = np.asarray(center, dtype=float)
    d = len(center)
    Z = rng.standard_normal((m, d))
    A = _sym_factor(Sigma)
    if m < d + 1:
        return center + Z @ A.T
    Zc = Z - Z.mean(axis=0)
    C = Zc.T @ Zc / (m - 1)
    try:
        W = _sym_factor(C, inverse=True)
    except np.linalg.LinAlgError:
        return center + Z @ A.T
    return center + Zc @ W @ A


def reflect_into_box(X, lower, upper):
    """Fold coordinates back into [lower, upper] by repeated reflection at the faces."""
    X = np.asarray(X, dtype=float)
    width = upper - lower
    y = np.mod(X - lower, 2.0 * width)
    y = np.where(y > width, 2.0 * width - y, y)
    return lower + y


def perturb_survivors(box, survivors, wave_points, gamma, seed, multiplier=1.0):
    """
    Next-wave candidates: 1/gamma exact-covariance normal draws around each survivor.

    Parameters
    ----------
    box : HyperBox
    survivors : list of HyperPoint
        The Q retained points of the current wave.
    wave_points : list of HyperPoint
        All r points of the current wave; their covariance shapes the kernel.
    gamma : float
        Survivor fraction, with 1/gamma integral.
    seed : int or sequence of int
        Base entropy; survivor k draws from the substream ``[*seed, k]``.

    Returns
    -------
    list of HyperPoint
        Q / gamma points, reflected into the box.
    """
    per = 1.0 / gamma
    m = int(round(per))
    if abs(per - m) > 1e-9 or m < 1:
        raise ValueError(f"1/gamma must be an integer, got gamma={gamma}")
    Q = len(survivors)
    kernel = PerturbationKernel.from_wave(box, wave_points, Q, multiplier)
    base = list(np.atleast_1d(seed))
    lower, upper = box.search_lower, box.search_upper
    out = []
    for k, s in enumerate(survivors):
        rng = np.random.default_rng(base + [k])
        batch = exact_covariance_batch(s.values, kernel.Sigma, m, rng)
        batch = reflect_into_box(batch, lower, upper)
        out.extend(box.point(row) for row in batch)
    return out
