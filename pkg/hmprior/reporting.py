"""
Writers for run artifacts: CSV tables, JSON reports and the run manifest.

Outputs carry no timestamps, so two deterministic runs of the same
configuration produce byte-identical files.
"""
import json
import logging
import platform
from pathlib import Path

import numpy as np
import pandas as pd
import plotly
import scipy
import yaml

import hmprior

logger = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).parent / "schemas" / "match_report.schema.json"


def write_csv(frame, path):
    """
    Write a table as RFC-4180 CSV (header row, CRLF line endings).

    Args:
        frame (pd.DataFrame): Table to write
        path: Destination file

    Returns:
        Path: The written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\r\n", float_format="%.10g")
    logger.debug("wrote %s (%d rows)", path, len(frame))
    return path


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(obj, path):
    """Write ``obj`` as indented JSON with sorted keys; non-finite numbers become null."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def library_versions():
    return {"hmprior": hmprior.__version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "plotly": plotly.__version__,
            "pyyaml": yaml.__version__,
            "python": platform.python_version()}


def write_manifest(out_dir, config, command, artifacts):
    """
    Record what is needed to reproduce a run.

    Args:
        out_dir: Output directory
        config (RunConfig): Effective configuration
        command (str): Subcommand that produced the artifacts
        artifacts (list): Paths written by the run

    Returns:
        Path: The manifest file
    """
    out_dir = Path(out_dir)
    names = sorted(str(Path(a).relative_to(out_dir)) if Path(a).is_relative_to(out_dir) else str(a)
                   for a in artifacts)
    manifest = {"command": command,
                "config_sha256": config.sha256,
                "config": config.raw,
                "seed": config.seed,
                "threads": config.threads,
                "deterministic": config.deterministic,
                "versions": library_versions(),
                "artifacts": names}
    return write_json(manifest, out_dir / "manifest.json")


def validation_frame(record):
    """One row per check of a ValidationRecord."""
    rows = [p.to_dict() for p in record.pvalues]
    frame = pd.DataFrame(rows, columns=["summary", "label", "kind", "index", "value", "alpha", "estimate", "n"])
    frame["verdict"] = [("pass" if (r["estimate"] < r["alpha"]) == (r["kind"] == "implausible") else "fail")
                        for r in rows]
    return frame


def load_schema():
    return json.loads(SCHEMA_PATH.read_text())
