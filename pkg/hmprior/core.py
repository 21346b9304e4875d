"""
Domain types shared by every module, plus the implausibility measure.

Hyperparameters live in two coordinate systems: the natural scale the model
understands and the search scale (log for log-scaled coordinates) where all
distances, perturbations and regressions happen.
"""
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from hmprior.errors import StructuralError

LINEAR = "linear"
LOG = "log"


class Kind(str, Enum):
    IMPLAUSIBLE = "implausible"
    PLAUSIBLE = "plausible"


@dataclass(frozen=True, eq=False)
class HyperBox:
    """
    Admissible rectangle for the hyperparameters.

    Parameters
    ----------
    lower, upper : sequence of float
        Natural-scale bounds, ``lower < upper`` componentwise.
    scale : sequence of {"linear", "log"}, optional
        Per-coordinate search scale. Log-scaled coordinates need ``lower > 0``.
    names : sequence of str, optional
        Labels used in tables and plots.
    """
    lower: tuple
    upper: tuple
    scale: tuple = None
    names: tuple = None

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper) or not lower:
            raise ValueError("box bounds must be non-empty and of equal length")
        scale = tuple(self.scale) if self.scale is not None else (LINEAR,) * len(lower)
        names = tuple(self.names) if self.names is not None else tuple(
            f"lambda_{c + 1}" for c in range(len(lower)))
        if len(scale) != len(lower) or len(names) != len(lower):
            raise ValueError("scale and names must match the box dimension")
        for c, (lo, hi, sc) in enumerate(zip(lower, upper, scale)):
            if sc not in (LINEAR, LOG):
                raise ValueError(f"unknown scale '{sc}' for coordinate {c}")
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
                raise ValueError(f"coordinate {c}: need finite lower < upper, got [{lo}, {hi}]")
            if sc == LOG and lo <= 0:
                raise ValueError(f"coordinate {c}: log scale requires lower > 0")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "names", names)

    @property
    def d(self):
        return len(self.lower)

    @property
    def log_scale(self):
        return tuple(sc == LOG for sc in self.scale)

    @property
    def search_lower(self):
        return self.to_search(np.asarray(self.lower))

    @property
    def search_upper(self):
        return self.to_search(np.asarray(self.upper))

    @property
    def widths(self):
        return self.search_upper - self.search_lower

    def to_search(self, natural):
        """Map natural-scale values (any leading shape, last axis d) to search coordinates."""
        natural = np.asarray(natural, dtype=float)
        mask = np.array(self.log_scale)
        if not mask.any():
            return natural.copy()
        out = natural.copy()
        out[..., mask] = np.log(natural[..., mask])
        return out

    def to_natural(self, search):
        search = np.asarray(search, dtype=float)
        mask = np.array(self.log_scale)
        if not mask.any():
            return search.copy()
        out = search.copy()
        out[..., mask] = np.exp(search[..., mask])
        return out

    def point(self, values, natural=False):
        """Build a HyperPoint in this box from search (default) or natural values."""
        values = np.asarray(values, dtype=float)
        if natural:
            values = self.to_search(values)
        return HyperPoint(values, self.log_scale)

    def contains(self, point, natural=False, tol=1e-12):
        values = point.values if isinstance(point, HyperPoint) else np.asarray(point, dtype=float)
        if natural:
            values = self.to_search(values)
        slack = tol * np.maximum(1.0, np.abs(self.widths))
        return bool(np.all(values >= self.search_lower - slack) and
                    np.all(values <= self.search_upper + slack))

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper),
                "scale": list(self.scale), "names": list(self.names)}


@dataclass(frozen=True, eq=False)
class HyperPoint:
    """A hyperparameter vector held in search coordinates."""
    values: np.ndarray
    log_scale: tuple = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"hyperparameter values must be finite, got {values}")
        log_scale = tuple(self.log_scale) if self.log_scale is not None else (False,) * len(values)
        if len(log_scale) != len(values):
            raise ValueError("log-scale flags must match the point dimension")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "log_scale", log_scale)

    @property
    def d(self):
        return len(self.values)

    def natural(self):
        out = self.values.copy()
        mask = np.array(self.log_scale, dtype=bool)
        out[mask] = np.exp(out[mask])
        return out


@dataclass(frozen=True, eq=False)
class SummaryVector:
    """J univariate summaries; NaN marks a degenerate entry."""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        values[~np.isfinite(values)] = np.nan
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def J(self):
        return len(self.values)

    @property
    def degenerate(self):
        return np.isnan(self.values)


@dataclass(frozen=True)
class SummaryConstraint:
    """Hypothetical implausible and plausible values for one summary, with its cutoff."""
    summary: int
    implausible: tuple = ()
    plausible: tuple = ()
    alpha: float = 0.05

    def __post_init__(self):
        implausible = tuple(float(v) for v in self.implausible)
        plausible = tuple(float(v) for v in self.plausible)
        if not all(np.isfinite(implausible)) or not all(np.isfinite(plausible)):
            raise ValueError(f"summary {self.summary}: hypothetical values must be finite")
        if not 0.0 < float(self.alpha) < 1.0:
            raise ValueError(f"summary {self.summary}: alpha must lie in (0, 1), got {self.alpha}")
        if int(self.summary) < 0:
            raise ValueError("summary index must be non-negative")
        object.__setattr__(self, "summary", int(self.summary))
        object.__setattr__(self, "implausible", implausible)
        object.__setattr__(self, "plausible", plausible)
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass(frozen=True)
class Check:
    """One flattened constraint: summary j, kind, position b, hypothetical value h, cutoff."""
    summary: int
    kind: Kind
    index: int
    value: float
    alpha: float
    summary_label: str = None

    @property
    def key(self):
        return (self.summary, self.index, self.kind)

    @property
    def label(self):
        name = self.summary_label or f"S{self.summary + 1}"
        tag = "I" if self.kind is Kind.IMPLAUSIBLE else "P"
        return f"{name}_{tag}{self.index + 1}"


@dataclass(frozen=True)
class ConstraintSet:
    """
    The expert's hypothetical data summaries.

    ``labels`` optionally names the model summaries so checks read as
    ``S1_I1`` or ``logvar_P1`` in reports.
    """
    constraints: tuple
    labels: tuple = None

    def __post_init__(self):
        constraints = tuple(self.constraints)
        object.__setattr__(self, "constraints", constraints)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
        if self.B < 1:
            raise ValueError("a constraint set needs at least one hypothetical value")
        seen = set()
        for c in constraints:
            if c.summary in seen:
                raise ValueError(f"summary {c.summary} listed twice in the constraint set")
            seen.add(c.summary)

    @property
    def B(self):
        return sum(len(c.implausible) + len(c.plausible) for c in self.constraints)

    @property
    def summaries(self):
        return tuple(c.summary for c in self.constraints)

    def _label(self, j):
        if self.labels is not None and j < len(self.labels):
            return self.labels[j]
        return None

    def checks(self):
        """Flatten into Check objects: per summary, implausible values first, then plausible."""
        out = []
        for c in self.constraints:
            for b, h in enumerate(c.implausible):
                out.append(Check(c.summary, Kind.IMPLAUSIBLE, b, h, c.alpha, self._label(c.summary)))
            for b, h in enumerate(c.plausible):
                out.append(Check(c.summary, Kind.PLAUSIBLE, b, h, c.alpha, self._label(c.summary)))
        return out

    def max_implausibility(self):
        return sum(len(c.implausible) * (1.0 - c.alpha) + len(c.plausible) * c.alpha
                   for c in self.constraints)

    def with_alpha(self, alpha):
        """Same hypothetical values, every cutoff replaced by ``alpha``."""
        return replace(self, constraints=tuple(replace(c, alpha=alpha) for c in self.constraints))

    def active(self, summaries):
        """Restrict to the given summary indices (staged introduction of checks)."""
        keep = tuple(c for c in self.constraints if c.summary in set(summaries))
        return replace(self, constraints=keep)

    def to_dict(self):
        return [{"summary": c.summary,
                 "label": self._label(c.summary),
                 "implausible": list(c.implausible),
                 "plausible": list(c.plausible),
                 "alpha": c.alpha} for c in self.constraints]


@dataclass(frozen=True)
class PValueEstimate:
    summary: int
    value: float
    kind: Kind
    estimate: float
    n: int
    index: int = 0
    alpha: float = 0.05
    label: str = ""

    def __post_init__(self):
        if not 0.0 <= self.estimate <= 1.0:
            raise ValueError(f"p-value estimate must lie in [0, 1], got {self.estimate}")

    @property
    def key(self):
        return (self.summary, self.index, self.kind)

    def to_dict(self):
        return {"summary": self.summary, "label": self.label, "kind": self.kind.value,
                "index": self.index, "value": self.value, "alpha": self.alpha,
                "estimate": self.estimate, "n": self.n}


@dataclass(frozen=True)
class ImplausibilityResult:
    lam: HyperPoint
    pvalues: list = field(default_factory=list)
    implausibility: float = 0.0
    boundary: bool = False

    @property
    def I(self):  # noqa: E743
        return self.implausibility


def implausibility(pvals, constraints, lam=None):
    """
    Hinge-sum implausibility of a hyperparameter value.

    Parameters
    ----------
    pvals : list of PValueEstimate
        Exactly one estimate per check in ``constraints``, matched on
        (summary, index, kind).
    constraints : ConstraintSet
    lam : HyperPoint, optional
        Carried through to the result.

    Returns
    -------
    ImplausibilityResult
        ``I = sum max(0, p_I - alpha) + sum max(0, alpha - p_P)``.
    """
    checks = constraints.checks()
    if len(pvals) != len(checks):
        raise StructuralError(f"expected {len(checks)} p-values, got {len(pvals)}")
    by_key = {}
    for p in pvals:
        if p.key in by_key:
            raise StructuralError(f"duplicate p-value for check {p.key}")
        by_key[p.key] = p

    total = 0.0
    boundary = False
    ordered = []
    for check in checks:
        p = by_key.get(check.key)
        if p is None:
            raise StructuralError(f"no p-value supplied for check {check.label}")
        if check.kind is Kind.IMPLAUSIBLE:
            total += max(0.0, p.estimate - check.alpha)
            boundary = boundary or p.estimate == check.alpha
        else:
            total += max(0.0, check.alpha - p.estimate)
        ordered.append(replace(p, alpha=check.alpha, label=check.label))
    return ImplausibilityResult(lam=lam, pvalues=ordered, implausibility=total, boundary=boundary)


def satisfies(result):
    """True iff every implausible p-value is < alpha and every plausible one is >= alpha."""
    if not result.pvalues:
        return False
    for p in result.pvalues:
        if p.kind is Kind.IMPLAUSIBLE and not p.estimate < p.alpha:
            return False
        if p.kind is Kind.PLAUSIBLE and not p.estimate >= p.alpha:
            return False
    return True
