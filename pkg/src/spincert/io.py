"""CSV and plan serialization.

Every CSV starts with ``#``-prefixed metadata lines (``# key: value``, values
JSON-encoded), followed by a header row and data rows. Floats carry 12
significant digits; ``%`` formatting ignores the locale.
"""

from __future__ import annotations

import csv
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

DIGITS = 12


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return "%.*g" % (DIGITS, float(x))


def config_key(config: Sequence[int]) -> str:
    return "(" + ",".join(str(int(c)) for c in config) + ")"


def parse_config_key(key: str) -> tuple[int, ...]:
    return tuple(int(c) for c in key.strip().strip("()").split(","))


def _meta_lines(meta: Optional[dict], timestamp: bool) -> list[str]:
    from . import __version__

    meta = dict(meta or {})
    meta.setdefault("version", __version__)
    if timestamp:
        meta["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return [f"# {k}: {json.dumps(v, sort_keys=True, default=_jsonable)}" for k, v in meta.items()]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "__dict__"):
        return vars(obj)
    return str(obj)


def write_csv(path, header: Sequence[str], rows, meta: Optional[dict] = None, timestamp: bool = False) -> Path:
    """Write ``rows`` under ``header`` with a metadata preamble."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for line in _meta_lines(meta, timestamp):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else fmt(c) for c in row])
    return path


def read_csv(path) -> tuple[dict, list[str], list[list[str]]]:
    """Return ``(metadata, header, rows)``; cells are left as strings."""
    meta, body = {}, []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(": ")
                meta[key] = json.loads(val)
            else:
                body.append(line)
    rows = list(csv.reader(body))
    return meta, rows[0], rows[1:]


def read_numeric(path, skip: Sequence[str] = ()) -> tuple[dict, dict[str, np.ndarray]]:
    """Columns as float arrays, except those named in ``skip`` (kept as strings)."""
    meta, header, rows = read_csv(path)
    cols = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in rows]
        cols[name] = np.array(vals) if name in skip else np.array(vals, dtype=float)
    return meta, cols


def _site_cols(n: int) -> list[str]:
    return [f"n_{k + 1}" for k in range(n)]


def write_sweep_csv(table, path, meta=None, timestamp=False) -> Path:
    """One row per (grid point, state): ``epsilon, state_label, energy, n_1..n_N``."""
    n = len(table.records[0][0].charge_profile)
    rows = []
    for e, recs in zip(table.epsilons, table.records):
        for r in recs:
            rows.append([e, r.label, r.energy, *r.charge_profile])
    return write_csv(path, ["epsilon", "state_label", "energy", *_site_cols(n)], rows, meta, timestamp)


def read_sweep_csv(path) -> tuple[dict, dict[str, np.ndarray]]:
    return read_numeric(path, skip=("state_label",))


def write_trajectory_csv(traj, path, meta=None, timestamp=False) -> Path:
    """``tau, epsilon, fidelity, n_1..n_N``; fidelity is NaN when untracked."""
    n = traj.profiles.shape[1]
    fid = traj.fidelity if traj.fidelity is not None else np.full(len(traj.times), np.nan)
    rows = [[t, e, f, *p] for t, e, f, p in zip(traj.times, traj.epsilons, fid, traj.profiles)]
    return write_csv(path, ["tau", "epsilon", "fidelity", *_site_cols(n)], rows, meta, timestamp)


def write_decoherence_csv(traj, path, meta=None, timestamp=False) -> Path:
    """``tau, epsilon, trace, purity, entropy_bits, n_1..n_N``."""
    n = traj.profiles.shape[1]
    rows = [[t, e, tr, pu, s, *p] for t, e, tr, pu, s, p in
            zip(traj.times, traj.epsilons, traj.traces, traj.purities, traj.entropies, traj.profiles)]
    return write_csv(path, ["tau", "epsilon", "trace", "purity", "entropy_bits", *_site_cols(n)],
                     rows, meta, timestamp)


def write_distribution_csv(dist, path, meta=None, timestamp=False) -> Path:
    rows = [[config_key(c), p] for c, p in zip(dist.configs, dist.probs)]
    return write_csv(path, ["config", "p_n"], rows, meta, timestamp)


def read_distribution_csv(path):
    from .opensys import ChargeDistribution

    meta, header, rows = read_csv(path)
    return meta, ChargeDistribution([parse_config_key(r[0]) for r in rows], [float(r[1]) for r in rows])


def write_confusion_csv(cm, path, meta=None, timestamp=False) -> Path:
    rows = [[lab, *row] for lab, row in zip(cm.labels, cm.counts)]
    return write_csv(path, ["true_state", *cm.columns], rows, meta, timestamp)


def write_plan(plan, path, meta=None) -> Path:
    """Plan as YAML: tilts, expected outcome probabilities and decision rules."""
    from . import __version__

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"meta": {"version": __version__, **(meta or {})}, "plan": plan.to_dict()}
    doc = json.loads(json.dumps(doc, default=_jsonable))
    with path.open("w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    return path


def read_plan(path, configs):
    from .certify import CertificationPlan

    with Path(path).open(encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return CertificationPlan.from_dict(doc["plan"], configs)
