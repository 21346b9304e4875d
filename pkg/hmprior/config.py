"""
Run configuration: a YAML document plus environment and command-line overrides.

Environment variables ``HMPRIOR_<SECTION>__<KEY>`` override ``section.key``;
``HMPRIOR_<KEY>`` overrides a top-level key. Values are parsed as YAML
scalars, so ``HMPRIOR_WAVES__R=50`` yields the integer 50.
"""
import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from hmprior.core import ConstraintSet, HyperBox, SummaryConstraint
from hmprior.engine import WaveConfig
from hmprior.errors import ConfigError
from hmprior.models import build_model

logger = logging.getLogger(__name__)

ENV_PREFIX = "HMPRIOR_"
TOP_LEVEL_KEYS = ("seed", "threads", "deterministic", "output", "plots")
SECTIONS = ("model", "box", "constraints", "waves", "bank", "grid", "validate", "jointcheck")
WAVE_KEYS = tuple(f.name for f in fields(WaveConfig) if f.name not in ("seed", "threads", "bank_size"))


@dataclass
class RunConfig:
    """Everything a CLI subcommand needs, validated and resolved."""
    model: object
    box: HyperBox
    constraints: ConstraintSet
    waves: WaveConfig
    bank_size: int
    bank_center: str
    freeze_scale: bool
    bank_path: str
    seed: int
    threads: int
    deterministic: bool
    output: Path
    plots: bool
    grid: tuple
    validate: dict
    jointcheck: dict
    raw: dict

    @property
    def sha256(self):
        """Hash of the effective configuration (after every override)."""
        text = json.dumps(self.raw, sort_keys=True, default=str)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _line_index(text):
    """Map dotted key paths to their 1-based YAML line numbers."""
    lines = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                sub = f"{path}.{key.value}" if path else str(key.value)
                lines[sub] = key.start_mark.line + 1
                walk(value, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                sub = f"{path}.{i}"
                lines[sub] = item.start_mark.line + 1
                walk(item, sub)

    try:
        walk(yaml.compose(text), "")
    except yaml.YAMLError:
        pass
    return lines


def _set_dotted(raw, dotted, value):
    parts = dotted.split(".")
    node = raw
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value


def env_overrides(environ=None):
    """Dotted-key overrides taken from ``HMPRIOR_*`` environment variables."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        if "__" in rest:
            section, key = rest.split("__", 1)
            if section not in SECTIONS:
                continue
            dotted = f"{section}.{key.replace('__', '.')}"
        elif rest in TOP_LEVEL_KEYS:
            dotted = rest
        else:
            continue
        out[dotted] = yaml.safe_load(value)
    return out


def _require(section, key, where):
    if key not in section:
        raise ConfigError(f"missing required key '{key}'", field=f"{where}.{key}" if where else key)
    return section[key]


class _Parser:
    def __init__(self, raw, lines):
        self.raw = raw
        self.lines = lines

    def error(self, message, field):
        return ConfigError(message, field=field, line=self.lines.get(field))

    def section(self, name, required=True):
        value = self.raw.get(name)
        if value is None:
            if required:
                raise self.error(f"missing required section '{name}'", name)
            return {}
        if not isinstance(value, dict):
            raise self.error(f"section '{name}' must be a mapping", name)
        return value

    def model(self):
        sec = self.section("model")
        name = sec.get("name")
        if not name:
            raise self.error("model name is required", "model.name")
        try:
            return build_model(name, sec.get("params") or {})
        except KeyError as e:
            raise self.error(str(e.args[0]), "model.name") from e
        except (TypeError, ValueError, OSError) as e:
            raise self.error(f"invalid model parameters: {e}", "model.params") from e

    def box(self, model):
        sec = self.section("box")
        try:
            box = HyperBox(lower=_require(sec, "lower", "box"), upper=_require(sec, "upper", "box"),
                           scale=sec.get("scale"),
                           names=sec.get("names") or list(model.param_names))
        except ConfigError as e:
            raise self.error(str(e).split("] ", 1)[-1], e.field) from e
        except (TypeError, ValueError) as e:
            raise self.error(str(e), "box") from e
        if box.d != model.d:
            raise self.error(f"box has {box.d} coordinates but model '{model.name}' has {model.d}", "box.lower")
        return box

    def summary_index(self, value, model, field):
        if isinstance(value, str):
            if value not in model.labels:
                raise self.error(f"unknown summary '{value}'; model summaries are {list(model.labels)}", field)
            return model.labels.index(value)
        if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < model.J:
            raise self.error(f"summary index must be in [0, {model.J}), got {value!r}", field)
        return value

    def constraints(self, model):
        entries = self.raw.get("constraints")
        if not isinstance(entries, list) or not entries:
            raise self.error("constraints must be a non-empty list", "constraints")
        out = []
        for i, entry in enumerate(entries):
            where = f"constraints.{i}"
            if not isinstance(entry, dict):
                raise self.error("each constraint must be a mapping", where)
            j = self.summary_index(_require(entry, "summary", where), model, f"{where}.summary")
            try:
                out.append(SummaryConstraint(summary=j,
                                             implausible=entry.get("implausible") or (),
                                             plausible=entry.get("plausible") or (),
                                             alpha=entry.get("alpha", 0.05)))
            except (TypeError, ValueError) as e:
                raise self.error(str(e), where) from e
        try:
            return ConstraintSet(tuple(out), labels=model.labels)
        except ValueError as e:
            raise self.error(str(e), "constraints") from e

    def waves(self, seed, threads, bank_size):
        sec = self.section("waves", required=False)
        unknown = sorted(set(sec) - set(WAVE_KEYS))
        if unknown:
            raise self.error(f"unknown wave settings {unknown}", f"waves.{unknown[0]}")
        try:
            return WaveConfig(**sec, seed=seed, threads=threads, bank_size=bank_size)
        except (TypeError, ValueError) as e:
            raise self.error(str(e), "waves") from e

    def integer(self, value, field, minimum=None):
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.error(f"expected an integer, got {value!r}", field)
        if minimum is not None and value < minimum:
            raise self.error(f"must be at least {minimum}, got {value}", field)
        return value


def parse_config(raw, lines=None):
    """Validate a configuration mapping and resolve it into a RunConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    p = _Parser(raw, lines or {})
    seed = p.integer(raw.get("seed", 0), "seed", minimum=0)
    deterministic = bool(raw.get("deterministic", False))
    threads = 1 if deterministic else p.integer(raw.get("threads", 1), "threads", minimum=1)
    bank = p.section("bank", required=False)
    bank_size = p.integer(bank.get("size", 100_000), "bank.size", minimum=1)
    center = bank.get("center", "mean")
    if center not in ("mean", "median"):
        raise p.error(f"bank center must be 'mean' or 'median', got {center!r}", "bank.center")

    model = p.model()
    box = p.box(model)
    constraints = p.constraints(model)
    waves = p.waves(seed, threads, bank_size)

    grid = raw.get("grid") or {}
    counts = grid.get("counts", [100, 100]) if isinstance(grid, dict) else grid
    if not isinstance(counts, (list, tuple)) or len(counts) != 2:
        raise p.error("grid counts must be a pair of integers", "grid.counts")
    counts = tuple(p.integer(c, f"grid.counts.{i}", minimum=1) for i, c in enumerate(counts))

    return RunConfig(model=model, box=box, constraints=constraints, waves=waves,
                     bank_size=bank_size, bank_center=center,
                     freeze_scale=bool(bank.get("freeze_scale", False)),
                     bank_path=bank.get("path"),
                     seed=seed, threads=threads, deterministic=deterministic,
                     output=Path(raw.get("output") or "out"),
                     plots=bool(raw.get("plots", False)),
                     grid=counts,
                     validate=dict(raw.get("validate") or {}),
                     jointcheck=dict(raw.get("jointcheck") or {}),
                     raw=raw)


def load_config(path, overrides=None, environ=None):
    """
    Read, override and validate a run configuration.

    Args:
        path: YAML file.
        overrides: dotted-key values from the command line; applied last.
        environ: environment mapping (defaults to ``os.environ``).

    Returns:
        RunConfig
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read configuration {path}: {e}") from e
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"invalid YAML in {path}: {getattr(e, 'problem', e)}",
                          line=mark.line + 1 if mark is not None else None) from e
    if raw is None:
        raise ConfigError(f"configuration {path} is empty")
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping at the top level", line=1)
    raw = copy.deepcopy(raw)
    merged = {**env_overrides(environ), **(overrides or {})}
    for dotted, value in merged.items():
        logger.debug("config override %s=%r", dotted, value)
        _set_dotted(raw, dotted, value)
    return parse_config(raw, _line_index(text))
