"""
History matching driver.

A run starts from a maximin Latin hypercube, scores every point of a wave by
its implausibility, keeps the Q lowest-scoring points and perturbs them into
the next wave. Scores come from the regression emulator on the simulation
bank, or from direct simulation in oracle mode.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from hmprior.core import ImplausibilityResult, implausibility, satisfies
from hmprior.density import constraint_pvalues
from hmprior.design import lhs_maximin, perturb_survivors
from hmprior.emulator import HETEROSCEDASTIC, HOMOSCEDASTIC, emulate_summaries
from hmprior.errors import DegenerateWaveError, StructuralError, UnsupportedError
from hmprior.simbank import augment_bank, build_bank, simulate_rows

logger = logging.getLogger(__name__)

EMULATED = "emulated"
ORACLE = "oracle"
MIN_VALIDATION_SIMS = 1000

LHS_STREAM = 1
PERTURB_STREAM = 2
ORACLE_STREAM = 5
VALIDATION_STREAM = 6


@dataclass(frozen=True)
class WaveConfig:
    """
    Settings for one history match.

    ``alpha`` overrides every constraint cutoff when set. ``alpha_schedule``
    gives a per-wave cutoff (the last entry persists) and
    ``constraint_stages`` maps a summary index to the first wave in which its
    checks count. ``augment_top`` limits bank augmentation to the best
    survivors of each wave (all survivors when unset).
    """
    r: int = 100
    gamma: float = 0.1
    alpha: float = None
    k: int = 1000
    mode: str = EMULATED
    regression: str = HOMOSCEDASTIC
    bank_size: int = 100_000
    oracle_sims: int = 1000
    augment_per_survivor: int = 0
    augment_top: int = None
    max_waves: int = 5
    patience: int = 3
    stop_on_zero: bool = True
    validate_sims: int = 0
    validate_top: int = 1
    alpha_schedule: tuple = None
    constraint_stages: dict = None
    multiplier: float = 1.0
    restarts: int = 100
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        per = 1.0 / self.gamma if self.gamma > 0 else np.inf
        if not 0 < self.gamma <= 1 or abs(per - round(per)) > 1e-9:
            raise ValueError(f"1/gamma must be an integer, got gamma={self.gamma}")
        q = self.gamma * self.r
        if abs(q - round(q)) > 1e-9 or round(q) < 1:
            raise ValueError(f"gamma * r must be a positive integer, got {q}")
        if self.r < round(per):
            raise ValueError("r must be at least 1/gamma")
        if self.mode not in (EMULATED, ORACLE):
            raise ValueError(f"unknown mode '{self.mode}'")
        if self.regression not in (HOMOSCEDASTIC, HETEROSCEDASTIC):
            raise ValueError(f"unknown regression mode '{self.regression}'")
        if self.augment_per_survivor < 0:
            raise ValueError("augment_per_survivor must be non-negative")
        if self.augment_top is not None and not 1 <= self.augment_top <= self.Q:
            raise ValueError(f"augment_top must lie in [1, Q={self.Q}], got {self.augment_top}")
        if self.max_waves < 1 or self.patience < 1:
            raise ValueError("max_waves and patience must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.alpha_schedule is not None:
            if not self.alpha_schedule or not all(0 < a < 1 for a in self.alpha_schedule):
                raise ValueError("alpha_schedule must be a non-empty list of values in (0, 1)")
            object.__setattr__(self, "alpha_schedule", tuple(float(a) for a in self.alpha_schedule))
        if self.constraint_stages is not None:
            object.__setattr__(self, "constraint_stages",
                               {int(j): int(w) for j, w in dict(self.constraint_stages).items()})

    @property
    def Q(self):
        return int(round(self.gamma * self.r))

    def alpha_for_wave(self, wave):
        if self.alpha_schedule:
            return self.alpha_schedule[min(wave, len(self.alpha_schedule)) - 1]
        return self.alpha

    def constraints_for_wave(self, constraints, wave):
        """Constraint set in force at ``wave``, after staging and the threshold schedule."""
        active = constraints
        if self.constraint_stages:
            keep = [j for j in constraints.summaries if self.constraint_stages.get(j, 1) <= wave]
            if not keep:
                keep = [min(constraints.summaries, key=lambda j: self.constraint_stages.get(j, 1))]
            active = constraints.active(keep)
        alpha = self.alpha_for_wave(wave)
        return active.with_alpha(alpha) if alpha is not None else active

    def to_dict(self):
        out = asdict(self)
        out["alpha_schedule"] = list(self.alpha_schedule) if self.alpha_schedule else None
        out["constraint_stages"] = ({str(j): w for j, w in sorted(self.constraint_stages.items())}
                                    if self.constraint_stages else None)
        return out


@dataclass
class WaveState:
    wave: int
    points: list
    results: list
    survivors: np.ndarray
    min_implausibility: float
    best_so_far: float
    constraints: object = None

    @property
    def implausibilities(self):
        return np.array([res.implausibility for res in self.results])

    @property
    def zero_indices(self):
        return np.flatnonzero(self.implausibilities == 0.0)


@dataclass
class ValidationRecord:
    """Oracle check of one zero-implausibility point; ``pending`` until simulated."""
    lam: object
    wave: int
    index: int
    status: str = "pending"
    pvalues: list = field(default_factory=list)
    satisfies: bool = None
    implausibility: float = None
    n_sims: int = 0

    def to_dict(self, box=None):
        natural = self.lam.natural()
        return {"wave": self.wave, "index": self.index, "status": self.status,
                "lambda": _named(natural, box),
                "satisfies": self.satisfies,
                "implausibility": _finite(self.implausibility),
                "n_sims": self.n_sims,
                "pvalues": [p.to_dict() for p in self.pvalues]}


@dataclass
class MatchReport:
    model: object
    box: object
    constraints: object
    config: WaveConfig
    waves: list
    validations: list
    stop_reason: str
    bank: object = None
    oracle_simulations: int = 0

    @property
    def zero_points(self):
        out = []
        for state in self.waves:
            if state.constraints is not None and state.constraints.B != self.constraints.B:
                continue
            out.extend((state.wave, int(i)) for i in state.zero_indices)
        return out

    @property
    def found(self):
        return bool(self.zero_points)

    @property
    def best(self):
        """(wave, index, ImplausibilityResult) of the lowest implausibility seen; earliest wins ties."""
        best = None
        for state in self.waves:
            i = int(state.survivors[0])
            res = state.results[i]
            if best is None or res.implausibility < best[2].implausibility:
                best = (state.wave, i, res)
        return best

    @property
    def total_simulations(self):
        bank_rows = self.bank.N if self.bank is not None else 0
        validated = sum(v.n_sims for v in self.validations)
        return int(bank_rows + self.oracle_simulations + validated)

    def to_dict(self):
        wave, index, res = self.best
        return {
            "model": self.model.describe(),
            "box": self.box.to_dict(),
            "constraints": self.constraints.to_dict(),
            "config": self.config.to_dict(),
            "stop_reason": self.stop_reason,
            "found": self.found,
            "waves": [{"wave": s.wave,
                       "n_points": len(s.points),
                       "survivors": len(s.survivors),
                       "min_implausibility": _finite(s.min_implausibility),
                       "best_so_far": _finite(s.best_so_far),
                       "zero_count": int(len(s.zero_indices)),
                       "active_summaries": list(s.constraints.summaries) if s.constraints else None}
                      for s in self.waves],
            "best": {"wave": wave, "index": index,
                     "lambda": _named(res.lam.natural(), self.box),
                     "implausibility": _finite(res.implausibility),
                     "boundary": res.boundary,
                     "pvalues": [p.to_dict() for p in res.pvalues]},
            "zero_points": [{"wave": w, "index": i,
                             "lambda": _named(self.waves[w - 1].points[i].natural(), self.box)}
                            for w, i in self.zero_points],
            "validations": [v.to_dict(self.box) for v in self.validations],
            "bank": ({"N": self.bank.N, "degenerate": self.bank.degenerate_count,
                      "provenance": {str(w): c for w, c in self.bank.provenance_counts().items()}}
                     if self.bank is not None else None),
            "total_simulations": self.total_simulations,
        }


def _finite(x):
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else None


def _named(values, box):
    names = box.names if box is not None else [f"lambda_{c + 1}" for c in range(len(values))]
    return {name: float(v) for name, v in zip(names, values)}


def _degenerate_result(lam):
    return ImplausibilityResult(lam=lam, pvalues=[], implausibility=np.inf)


def simulate_predictive(model, lam, n_sims, seed, threads=1):
    """Direct prior predictive draws at ``lam``: an (n_sims, J) array, NaN for degenerate entries."""
    naturals = np.repeat(lam.natural()[None, :], n_sims, axis=0)
    return simulate_rows(model, naturals, seed, threads=threads)


def _samples_from_simulations(sims, summaries):
    out = {}
    for j in summaries:
        col = sims[:, j]
        col = col[np.isfinite(col)]
        if len(col) < 2:
            return None
        out[j] = col
    return out


def evaluate_points(model, points, constraints, cfg, bank=None, wave=1):
    """
    Implausibility of every point, in input order.

    Emulated mode adjusts bank simulations to each point; oracle mode
    simulates ``cfg.oracle_sims`` predictive draws per point.
    """
    summaries = constraints.summaries
    if cfg.mode == EMULATED and bank is None:
        raise ValueError("emulated evaluation needs a simulation bank")

    def work(i):
        lam = points[i]
        if cfg.mode == EMULATED:
            samples = emulate_summaries(bank, lam, summaries, cfg.k, cfg.regression)
            if not all(np.all(np.isfinite(s)) for s in samples.values()):
                return _degenerate_result(lam)
        else:
            # simulation threads stay at 1 here; parallelism is across points
            sims = simulate_predictive(model, lam, cfg.oracle_sims, [cfg.seed, ORACLE_STREAM, wave, i])
            samples = _samples_from_simulations(sims, summaries)
            if samples is None:
                return _degenerate_result(lam)
        return implausibility(constraint_pvalues(samples, constraints), constraints, lam)

    if cfg.threads > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(work, range(len(points))))
    return [work(i) for i in range(len(points))]


def validate_lambda(model, lam, constraints, n_sims, seed, threads=1):
    """
    Oracle check at ``lam``: direct simulation, KDE p-values and constraint verdicts.

    Returns
    -------
    ValidationRecord
        With ``status="completed"``; ``satisfies`` is False when a summary
        has fewer than two finite draws.
    """
    if n_sims < MIN_VALIDATION_SIMS:
        raise ValueError(f"validation needs at least {MIN_VALIDATION_SIMS} simulations, got {n_sims}")
    if max(constraints.summaries) >= model.J:
        raise StructuralError(f"constraints reference summary {max(constraints.summaries)}, "
                              f"but the model has J={model.J}")
    sims = simulate_predictive(model, lam, n_sims, seed, threads=threads)
    samples = _samples_from_simulations(sims, constraints.summaries)
    record = ValidationRecord(lam=lam, wave=0, index=0, status="completed", n_sims=n_sims)
    if samples is None:
        logger.warning("validation at %s: too few finite simulations", lam.natural())
        record.satisfies = False
        return record
    res = implausibility(constraint_pvalues(samples, constraints), constraints, lam)
    record.pvalues = res.pvalues
    record.implausibility = res.implausibility
    record.satisfies = satisfies(res)
    logger.info("validation at %s: I=%.4g satisfies=%s", lam.natural(), res.implausibility, record.satisfies)
    return record


def _check_inputs(model, box, constraints):
    if box.d != model.d:
        raise ValueError(f"box dimension {box.d} does not match model dimension {model.d}")
    bad = [j for j in constraints.summaries if j >= model.J]
    if bad:
        raise StructuralError(f"constraints reference summaries {bad}, but the model has J={model.J}")


def run_history_match(model, box, constraints, cfg, bank=None):
    """
    Run waves of history matching until a stopping rule fires.

    The run stops when a zero-implausibility point appears (``stop_on_zero``),
    when the best implausibility has not decreased for ``patience`` waves, or
    after ``max_waves``.

    Parameters
    ----------
    model : ModelSpec
    box : HyperBox
    constraints : ConstraintSet
    cfg : WaveConfig
    bank : SimulationBank, optional
        Built from ``cfg.bank_size`` pseudo-prior draws when omitted in emulated mode.

    Returns
    -------
    MatchReport
    """
    _check_inputs(model, box, constraints)
    seed = cfg.seed
    if cfg.mode == EMULATED and bank is None:
        bank = build_bank(model, box, cfg.bank_size, seed, threads=cfg.threads)

    points = lhs_maximin(box, cfg.r, [seed, LHS_STREAM], cfg.restarts)
    waves = []
    best, stale, regime = np.inf, 0, None
    oracle_sims = 0
    stop_reason = "max_waves"
    for w in range(1, cfg.max_waves + 1):
        active = cfg.constraints_for_wave(constraints, w)
        key = (active.summaries, tuple(c.alpha for c in active.constraints))
        if key != regime:
            # scores under different checks or cutoffs are not comparable
            best, stale, regime = np.inf, 0, key
        results = evaluate_points(model, points, active, cfg, bank, wave=w)
        if cfg.mode == ORACLE:
            oracle_sims += cfg.oracle_sims * len(points)
        scores = np.array([res.implausibility for res in results])
        if not np.any(np.isfinite(scores)):
            raise DegenerateWaveError(f"wave {w}: all {len(points)} evaluations were degenerate")
        order = np.argsort(scores, kind="stable")
        survivors = order[:cfg.Q]
        wave_min = float(scores[order[0]])
        if wave_min < best:
            best, stale = wave_min, 0
        else:
            stale += 1
        state = WaveState(wave=w, points=points, results=results, survivors=survivors,
                          min_implausibility=wave_min, best_so_far=best, constraints=active)
        waves.append(state)
        full = active.B == constraints.B
        logger.info("wave %d: min I=%.4g best=%.4g zero-I points=%d", w, wave_min, best,
                    len(state.zero_indices) if full else 0)

        if cfg.stop_on_zero and full and len(state.zero_indices):
            stop_reason = "zero_implausibility"
            break
        if stale >= cfg.patience:
            stop_reason = "stalled"
            break
        if w == cfg.max_waves:
            break

        kept = [points[i] for i in survivors]
        if cfg.mode == EMULATED and cfg.augment_per_survivor > 0:
            top = kept if cfg.augment_top is None else kept[:cfg.augment_top]
            bank = augment_bank(bank, model, box, top, cfg.augment_per_survivor, seed, wave=w,
                                threads=cfg.threads)
        points = perturb_survivors(box, kept, points, cfg.gamma, [seed, PERTURB_STREAM, w], cfg.multiplier)

    report = MatchReport(model=model, box=box, constraints=constraints, config=cfg, waves=waves,
                         validations=[], stop_reason=stop_reason, bank=bank,
                         oracle_simulations=oracle_sims)
    final = cfg.constraints_for_wave(constraints, len(waves))
    for n, (w, i) in enumerate(report.zero_points):
        lam = waves[w - 1].points[i]
        if cfg.validate_sims > 0 and n < cfg.validate_top:
            record = validate_lambda(model, lam, final, cfg.validate_sims,
                                     [seed, VALIDATION_STREAM, w, i], threads=cfg.threads)
            record.wave, record.index = w, i
        else:
            record = ValidationRecord(lam=lam, wave=w, index=i)
        report.validations.append(record)
    logger.info("history match finished after %d waves (%s); %d zero-implausibility points",
                len(waves), stop_reason, len(report.zero_points))
    return report


def _result_row(res, checks):
    by_label = {p.label: p.estimate for p in res.pvalues}
    row = {c.label: by_label.get(c.label, np.nan) for c in checks}
    row["I"] = res.implausibility
    return row


def trace_frame(report):
    """Every evaluated point: wave, natural-scale lambda, one p-value column per check, I."""
    checks = report.constraints.checks()
    rows = []
    for state in report.waves:
        kept = set(int(i) for i in state.survivors)
        for i, (lam, res) in enumerate(zip(state.points, state.results)):
            row = {"wave": state.wave, "point": i}
            row.update(_named(lam.natural(), report.box))
            row.update(_result_row(res, checks))
            row["survivor"] = i in kept
            rows.append(row)
    return pd.DataFrame(rows)


def survivor_frame(report, wave=None):
    """Survivors of ``wave`` (default: the last) on the natural scale, ready to overlay on a grid map."""
    state = report.waves[-1] if wave is None else report.waves[wave - 1]
    rows = []
    for i in state.survivors:
        row = {"wave": state.wave, "point": int(i)}
        row.update(_named(state.points[i].natural(), report.box))
        row["I"] = state.results[i].implausibility
        rows.append(row)
    return pd.DataFrame(rows)


def grid_points(box, grid):
    """Grid over a 2-D box, equally spaced in search coordinates; lambda_1 outer, lambda_2 fastest."""
    axes = [np.linspace(box.search_lower[c], box.search_upper[c], int(grid[c])) for c in range(2)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
    return [box.point(row) for row in mesh]


def grid_pvalue_map(model, box, constraints, grid, cfg, bank=None):
    """
    Emulated (or oracle) p-values and implausibility over a regular 2-D grid.

    Returns
    -------
    pandas.DataFrame
        One row per grid point in row-major order.
    """
    if box.d != 2:
        raise UnsupportedError(f"grid maps need a 2-dimensional box, got d={box.d}")
    if len(grid) != 2 or min(grid) < 1:
        raise ValueError("grid needs a positive count for each of the two axes")
    _check_inputs(model, box, constraints)
    if cfg.mode == EMULATED and bank is None:
        bank = build_bank(model, box, cfg.bank_size, cfg.seed, threads=cfg.threads)
    active = constraints.with_alpha(cfg.alpha) if cfg.alpha is not None else constraints
    points = grid_points(box, grid)
    logger.info("evaluating %d x %d grid map", grid[0], grid[1])
    results = evaluate_points(model, points, active, cfg, bank, wave=0)
    checks = active.checks()
    rows = []
    for lam, res in zip(points, results):
        row = _named(lam.natural(), box)
        row.update(_result_row(res, checks))
        rows.append(row)
    return pd.DataFrame(rows)
