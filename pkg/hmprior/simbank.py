"""
Simulation bank: paired (lambda_i, S_i) draws used to train the emulator.

The bank is an immutable value. ``augment_bank`` returns a new bank with the
extra rows appended; existing rows are never touched.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from hmprior.core import HyperBox
from hmprior.errors import SimulationError

logger = logging.getLogger(__name__)

MAX_RETRIES = 3
BANK_STREAM = 3


def mean_abs_deviation(X, center="mean"):
    """Per-column mean absolute deviation about the column mean (or median)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    loc = np.median(X, axis=0) if center == "median" else X.mean(axis=0)
    return np.mean(np.abs(X - loc), axis=0)


@dataclass(frozen=True, eq=False)
class SimulationBank:
    """
    Attributes
    ----------
    lambdas : ndarray (N, d)
        Hyperparameters in search coordinates.
    summaries : ndarray (N, J)
        Simulated summaries; NaN marks a degenerate entry.
    mad : ndarray (d,)
        Distance scale per coordinate.
    waves : ndarray (N,)
        Provenance: 0 for pseudo-prior draws, w for rows added at wave w.
    """
    lambdas: np.ndarray
    summaries: np.ndarray
    mad: np.ndarray
    waves: np.ndarray
    labels: tuple = None
    center: str = "mean"
    freeze_scale: bool = False

    def __post_init__(self):
        if len(self.lambdas) != len(self.summaries) or len(self.lambdas) != len(self.waves):
            raise ValueError("bank row counts do not match")
        for arr in (self.lambdas, self.summaries, self.mad, self.waves):
            arr.setflags(write=False)

    @property
    def N(self):
        return len(self.lambdas)

    @property
    def d(self):
        return self.lambdas.shape[1]

    @property
    def J(self):
        return self.summaries.shape[1]

    def usable_rows(self, summary=None):
        """Indices of rows whose summary (or every summary) is finite."""
        S = self.summaries if summary is None else self.summaries[:, [summary]]
        return np.flatnonzero(np.all(np.isfinite(S), axis=1))

    @property
    def degenerate_count(self):
        return int(self.N - len(self.usable_rows()))

    def provenance_counts(self):
        waves, counts = np.unique(self.waves, return_counts=True)
        return {int(w): int(c) for w, c in zip(waves, counts)}


def _scales(lambdas, center):
    mad = mean_abs_deviation(lambdas, center)
    # a constant coordinate carries no distance information
    return np.where(mad > 0, mad, 1.0)


def _row_seed(seed, wave, i, attempt=0):
    return list(np.atleast_1d(seed)) + [BANK_STREAM, int(wave), int(i), int(attempt)]


def _simulate_one(model, natural, seed, wave, i):
    last = None
    for attempt in range(MAX_RETRIES):
        try:
            return model.simulate(natural, _row_seed(seed, wave, i, attempt))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
            last = e
            logger.debug("simulation %d at %s failed (attempt %d): %s", i, natural, attempt + 1, e)
    raise SimulationError(f"model simulation failed {MAX_RETRIES} times at lambda={natural}: {last}",
                          lam=natural)


def simulate_rows(model, naturals, seed, wave=0, threads=1, offset=0):
    """
    Simulate one summary vector per row of ``naturals``.

    Row i uses the entropy ``[*seed, 3, wave, offset + i, attempt]`` so the
    result does not depend on ``threads``.
    """
    naturals = np.atleast_2d(np.asarray(naturals, dtype=float))
    n = len(naturals)
    if n == 0:
        return np.empty((0, model.J))
    if model.vectorized:
        seeds = [_row_seed(seed, wave, offset + i) for i in range(n)]
        return np.asarray(model.simulate_many(naturals, seeds), dtype=float)

    def work(i):
        return _simulate_one(model, naturals[i], seed, wave, offset + i)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(work, range(n), chunksize=max(1, n // (8 * threads))))
    else:
        rows = [work(i) for i in range(n)]
    out = np.array(rows, dtype=float).reshape(n, model.J)
    out[~np.isfinite(out)] = np.nan
    return out


def build_bank(model, box, N, seed, threads=1, center="mean", freeze_scale=False):
    """
    Pseudo-prior bank: lambda uniform on the box in search coordinates, one
    simulation per draw.

    Parameters
    ----------
    model : ModelSpec
    box : HyperBox
    N : int
    seed : int or sequence of int
    threads : int, optional
    center : {"mean", "median"}
        Centering of the absolute-deviation distance scale.
    freeze_scale : bool
        Keep the wave-0 scales when the bank is later augmented.

    Returns
    -------
    SimulationBank
    """
    if N < 1:
        raise ValueError(f"bank size must be at least 1, got {N}")
    if box.d != model.d:
        raise ValueError(f"box dimension {box.d} does not match model dimension {model.d}")
    rng = np.random.default_rng(list(np.atleast_1d(seed)) + [BANK_STREAM])
    lambdas = rng.uniform(box.search_lower, box.search_upper, size=(N, box.d))
    logger.info("building simulation bank: N=%d d=%d J=%d", N, model.d, model.J)
    summaries = simulate_rows(model, box.to_natural(lambdas), seed, wave=0, threads=threads)
    bank = SimulationBank(lambdas=lambdas, summaries=summaries, mad=_scales(lambdas, center),
                          waves=np.zeros(N, dtype=int), labels=tuple(model.labels),
                          center=center, freeze_scale=freeze_scale)
    if bank.degenerate_count:
        logger.warning("%d of %d bank rows have degenerate summaries and are excluded from fits",
                       bank.degenerate_count, N)
    return bank


def augment_bank(bank, model, box, points, per_point, seed, wave, threads=1):
    """
    Append ``per_point`` fresh simulations at each of ``points``, tagged with ``wave``.
    """
    if not points:
        raise ValueError("augment_bank needs at least one point")
    if per_point <= 0:
        return bank
    new_lambdas = np.repeat(np.array([p.values for p in points]), per_point, axis=0)
    new_summaries = simulate_rows(model, box.to_natural(new_lambdas), seed, wave=wave,
                                  threads=threads, offset=bank.N)
    lambdas = np.vstack([bank.lambdas, new_lambdas])
    mad = bank.mad.copy() if bank.freeze_scale else _scales(lambdas, bank.center)
    logger.info("augmented bank with %d rows at wave %d (total %d)", len(new_lambdas), wave, len(lambdas))
    return replace(bank,
                   lambdas=lambdas,
                   summaries=np.vstack([bank.summaries, new_summaries]),
                   mad=mad,
                   waves=np.concatenate([bank.waves, np.full(len(new_lambdas), wave, dtype=int)]))


def nearest(bank, target, k, summary=None):
    """
    Indices of the k usable rows closest to ``target`` in MAD-scaled distance.

    Ties are broken by lower row index. ``summary`` restricts the candidates to
    rows where that summary is finite.
    """
    rows = bank.usable_rows(summary)
    if k > len(rows):
        raise ValueError(f"k={k} exceeds the {len(rows)} usable bank rows")
    if k < 1:
        raise ValueError("k must be positive")
    t = target.values if hasattr(target, "values") else np.asarray(target, dtype=float)
    dist = np.sum(((bank.lambdas[rows] - t) / bank.mad) ** 2, axis=1)
    cutoff = np.partition(dist, k - 1)[k - 1]
    candidates = np.flatnonzero(dist <= cutoff)
    order = candidates[np.argsort(dist[candidates], kind="stable")][:k]
    return rows[order]


def save_bank(bank, path, box=None):
    """
    Write the bank as a CSV table plus a JSON sidecar header (``<path>.json``).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = list(bank.labels) if bank.labels else [f"S{j + 1}" for j in range(bank.J)]
    frame = pd.DataFrame(bank.lambdas, columns=[f"lambda_{c + 1}" for c in range(bank.d)])
    for j, label in enumerate(labels):
        frame[label] = bank.summaries[:, j]
    frame.insert(0, "wave", bank.waves)
    frame.to_csv(path, index=False, lineterminator="\r\n", float_format="%.17g")
    header = {"d": bank.d, "J": bank.J, "N": bank.N, "labels": labels,
              "mad": bank.mad.tolist(), "center": bank.center, "freeze_scale": bank.freeze_scale,
              "waves": bank.provenance_counts(),
              "box": box.to_dict() if box is not None else None}
    Path(str(path) + ".json").write_text(json.dumps(header, indent=2, sort_keys=True))
    return path


def load_bank(path):
    """Read a bank written by ``save_bank``; returns (bank, box or None)."""
    path = Path(path)
    header = json.loads(Path(str(path) + ".json").read_text())
    frame = pd.read_csv(path, float_precision="round_trip")
    d, J = int(header["d"]), int(header["J"])
    lambdas = frame[[f"lambda_{c + 1}" for c in range(d)]].to_numpy(dtype=float)
    summaries = frame[header["labels"]].to_numpy(dtype=float)
    if len(frame) != int(header["N"]) or summaries.shape[1] != J:
        raise ValueError(f"bank snapshot {path} does not match its header")
    bank = SimulationBank(lambdas=lambdas, summaries=summaries,
                          mad=np.asarray(header["mad"], dtype=float),
                          waves=frame["wave"].to_numpy(dtype=int),
                          labels=tuple(header["labels"]), center=header.get("center", "mean"),
                          freeze_scale=bool(header.get("freeze_scale", False)))
    box = HyperBox(**header["box"]) if header.get("box") else None
    return bank, box
