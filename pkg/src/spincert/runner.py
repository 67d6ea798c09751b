"""Config-driven experiment runner and command-line entry point.

Configs are YAML mappings. A complete annotated example lives in
``demos/config_example.yaml``; the sections are

``kind``
    one of ``spectrum``, ``sweep``, ``evolve``, ``lindblad``, ``certify``.
``geometry``
    ``{kind: chain, sites: N}`` or ``{kind: ladder, cols: C}``.
``params``
    ``{t, U, V}`` in units of ``t``.
``<kind>``
    options for the chosen experiment (see ``DEFAULTS``).

Usage::

    python -m spincert sweep --config cfg.yaml --out results/ --seed 7 --threads 2

Every run writes CSV files whose metadata preamble echoes the resolved
config, the package version and the seed. Failures exit non-zero after
printing one JSON line, prefixed ``error:``, to stderr.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import io
from .certify import PlanningError, plan_tilts, simulate_protocol, single_tilt_separators
from .dynamics import (
    TiltSchedule,
    adiabatic_time_bound,
    evolve_state,
    sample_times,
    time_averaged_charge,
)
from .fock import MAX_SITES, half_filling
from .model import Geometry, ModelParams, TiltedHubbard, build_charge_projectors, build_spin_squared
from .opensys import KL_FLOOR, charge_distribution, evolve_lindblad, kl_distance
from .spectral import detect_anticrossings, grid, low_spectrum, min_gap, parse_label, sweep_spectrum

log = logging.getLogger(__name__)

KINDS = ("spectrum", "sweep", "evolve", "lindblad", "certify")

DEFAULTS: dict[str, Any] = {
    "geometry": {"kind": "chain", "sites": 4},
    "params": {"t": 1.0, "U": 40.0, "V": 10.0},
    "seed": 0,
    "spectrum": {"epsilon": 0.0, "k": 8, "tol": 1e-9},
    "sweep": {"grid": None, "k": 8, "tol": 1e-9, "spins": [0, 1], "refine": True},
    "evolve": {"initial": ["S1", "T1"], "T_max": 2e4, "eps_max": 70.0, "hold": 0.0,
               "tol": 1e-8, "max_step": 50.0, "samples": 500, "window": None},
    "lindblad": {"initial": ["S1", "T1"], "T_max": 2e4, "eps_max": 70.0, "hold": 0.0,
                 "gammas": [1e-3], "tol": 1e-5, "max_step": 50.0, "samples": 500, "pairs": [["S1", "T1"]]},
    "certify": {"targets": ["S1", "T1", "S2", "T2"], "grid": None, "k": 8, "threshold": 1.0,
                "candidate_step": 5.0, "shots": 100, "trials": 100, "gamma": 0.0,
                "rate": None, "hold": 0.0, "tol": 1e-8, "simulate": False, "blocks": None},
}

DEFAULT_GRID = {"chain": {"start": 0.0, "stop": 70.0, "step": 0.25},
                "ladder": {"start": 0.0, "stop": 100.0, "step": 0.5}}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(["config: top level must be a mapping"])
    return data


def resolve_config(config: dict) -> dict:
    """Fill defaults for the named kind; returns a new dict."""
    kind = config.get("kind")
    base = {k: DEFAULTS[k] for k in ("geometry", "params", "seed")}
    if kind in KINDS:
        base[kind] = DEFAULTS[kind]
    out = _merge(base, config)
    geom = out.get("geometry") or {}
    if kind in ("sweep", "certify") and isinstance(out.get(kind), dict) and out[kind].get("grid") is None:
        out[kind]["grid"] = dict(DEFAULT_GRID.get(geom.get("kind"), DEFAULT_GRID["chain"]))
    return out


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate_config(config: dict) -> list[str]:
    """Structural and range checks. Returns a list of ``"field: problem"`` strings (empty if valid)."""
    errs: list[str] = []
    if not isinstance(config, dict):
        return ["config: must be a mapping"]
    kind = config.get("kind")
    if kind not in KINDS:
        errs.append(f"kind: must be one of {', '.join(KINDS)}")
    present = [k for k in KINDS if k in config and k != kind]
    if present:
        errs.append(f"kind: sections for other kinds present ({', '.join(present)})")
    cfg = resolve_config(config)

    g = cfg.get("geometry")
    if not isinstance(g, dict) or g.get("kind") not in ("chain", "ladder"):
        errs.append("geometry.kind: must be chain or ladder")
    elif g["kind"] == "chain":
        n = g.get("sites")
        if not isinstance(n, int) or isinstance(n, bool) or n < 2 or n > MAX_SITES:
            errs.append(f"geometry.sites: integer in [2, {MAX_SITES}] required")
        elif n % 2:
            errs.append("geometry.sites: half filling needs an even site count")
        if "cols" in g:
            errs.append("geometry.cols: only valid for a ladder")
    else:
        c = g.get("cols")
        if not isinstance(c, int) or isinstance(c, bool) or c < 2 or 2 * c > MAX_SITES:
            errs.append("geometry.cols: integer >= 2 required")
        if "sites" in g and g["sites"] != 2 * (c if isinstance(c, int) else 0):
            errs.append("geometry.sites: a ladder has 2*cols sites")

    p = cfg.get("params") or {}
    for name in ("t", "U", "V"):
        v = p.get(name)
        if not _finite(v):
            errs.append(f"params.{name}: finite number required")
        elif name in ("U", "V") and v < 0:
            errs.append(f"params.{name}: must be non-negative")
        elif name == "t" and v <= 0:
            errs.append("params.t: must be positive")
    seed = cfg.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        errs.append("seed: unsigned 64-bit integer required")
    if kind not in KINDS:
        return errs

    s = cfg[kind]
    if not isinstance(s, dict):
        return errs + [f"{kind}: must be a mapping"]

    def positive(name, integer=False, allow_zero=False):
        v = s.get(name)
        ok = _finite(v) and (v >= 0 if allow_zero else v > 0)
        if integer:
            ok = ok and isinstance(v, int)
        if not ok:
            errs.append(f"{kind}.{name}: {'non-negative' if allow_zero else 'positive'}"
                        f" {'integer' if integer else 'number'} required")

    def labels(name):
        v = s.get(name)
        if not isinstance(v, list) or not v:
            errs.append(f"{kind}.{name}: non-empty list of state labels required")
            return
        for lab in v:
            try:
                parse_label(str(lab))
            except ValueError:
                errs.append(f"{kind}.{name}: bad state label {lab!r}")

    def check_grid():
        gr = s.get("grid")
        if not isinstance(gr, dict) or not all(_finite(gr.get(x)) for x in ("start", "stop", "step")):
            errs.append(f"{kind}.grid: start, stop and step numbers required")
        elif gr["step"] <= 0 or gr["stop"] < gr["start"]:
            errs.append(f"{kind}.grid: empty grid")
        elif gr["start"] < 0:
            errs.append(f"{kind}.grid.start: tilt must be non-negative")

    if kind == "spectrum":
        if not _finite(s.get("epsilon")) or s["epsilon"] < 0:
            errs.append("spectrum.epsilon: non-negative number required")
        positive("k", integer=True)
        positive("tol")
    elif kind == "sweep":
        check_grid()
        positive("k", integer=True)
        positive("tol")
        if not isinstance(s.get("spins"), list) or any(x not in (0, 1, 2, 0.0, 1.0, 2.0) for x in s["spins"]):
            errs.append("sweep.spins: list of total spins required")
    elif kind in ("evolve", "lindblad"):
        labels("initial")
        for name in ("T_max", "eps_max", "tol", "max_step"):
            positive(name)
        positive("hold", allow_zero=True)
        positive("samples", integer=True)
        if kind == "lindblad":
            gs = s.get("gammas")
            if not isinstance(gs, list) or not gs or not all(_finite(x) and x >= 0 for x in gs):
                errs.append("lindblad.gammas: non-empty list of non-negative rates required")
            if g and g.get("kind") == "chain" and isinstance(g.get("sites"), int) and g["sites"] > 6:
                errs.append("geometry.sites: density-matrix runs are limited to 6 sites")
            if g and g.get("kind") == "ladder" and isinstance(g.get("cols"), int) and g["cols"] > 3:
                errs.append("geometry.cols: density-matrix runs are limited to 3 columns")
        else:
            w = s.get("window")
            if w is not None and (not isinstance(w, list) or len(w) != 2 or not all(_finite(x) for x in w)
                                  or w[1] < w[0]):
                errs.append("evolve.window: [tau_a, tau_b] with tau_a <= tau_b required")
    elif kind == "certify":
        labels("targets")
        check_grid()
        positive("k", integer=True)
        positive("threshold")
        positive("candidate_step")
        positive("shots", integer=True)
        positive("trials", integer=True)
        positive("tol")
        positive("hold", allow_zero=True)
        if not _finite(s.get("gamma")) or s["gamma"] < 0:
            errs.append("certify.gamma: non-negative number required")
        if s.get("rate") is not None and (not _finite(s["rate"]) or s["rate"] <= 0):
            errs.append("certify.rate: positive number required")
        if s.get("simulate") and s.get("rate") is None:
            errs.append("certify.rate: required when simulate is true")
        b = s.get("blocks")
        if b is not None:
            n = g.get("sites") if isinstance(g, dict) else None
            if g.get("kind") != "chain" or not isinstance(b, int) or b < 2 or b % 2 or not isinstance(n, int) or n % b:
                errs.append("certify.blocks: even block size dividing the chain length required")
    return errs


# -- experiments ------------------------------------------------------------


def _geometry(cfg) -> Geometry:
    g = cfg["geometry"]
    return Geometry.chain(g["sites"]) if g["kind"] == "chain" else Geometry.ladder(g["cols"])


def _params(cfg) -> ModelParams:
    p = cfg["params"]
    return ModelParams(t=float(p["t"]), U=float(p["U"]), V=float(p["V"]))


def _grid(s) -> np.ndarray:
    return grid(s["grid"]["start"], s["grid"]["stop"], s["grid"]["step"])


def _initial_states(model, labels, k=8):
    S2 = build_spin_squared(model.sector)
    kk = min(max(k, 4 * max(parse_label(l)[1] for l in labels) + 4), model.dim)
    recs = {r.label: r for r in low_spectrum(model(0.0), S2, kk, sector=model.sector)}
    missing = [l for l in labels if l not in recs]
    if missing:
        raise LookupError(f"states not found at eps=0: {', '.join(missing)}")
    return {l: recs[l].vector for l in labels}


def _run_spectrum(cfg, out: Path, meta, ts):
    s = cfg["spectrum"]
    geom = _geometry(cfg)
    sector = half_filling(geom.sites)
    model = TiltedHubbard(geom, _params(cfg), sector)
    recs = low_spectrum(model(s["epsilon"]), build_spin_squared(sector), min(s["k"], model.dim),
                        tol=s["tol"], sector=sector)
    n = geom.sites
    rows = [[s["epsilon"], r.label, r.energy, r.total_spin, *r.charge_profile] for r in recs]
    return [io.write_csv(out / "spectrum.csv",
                         ["epsilon", "state_label", "energy", "total_spin"] + [f"n_{k + 1}" for k in range(n)],
                         rows, meta, ts)]


def _run_sweep(cfg, out: Path, meta, ts):
    s = cfg["sweep"]
    table = sweep_spectrum(_geometry(cfg), _params(cfg), _grid(s), s["k"], tol=s["tol"])
    files = [io.write_sweep_csv(table, out / "sweep.csv", meta, ts)]
    gap_rows, ac_rows = [], []
    for spin in s["spins"]:
        spin = float(spin)
        try:
            e_grid, g_grid = min_gap(table, spin, refine=False)
            e_ref, g_ref = min_gap(table, spin, refine=s["refine"])
        except (LookupError, ValueError) as exc:
            log.warning("no gap for spin %g: %s", spin, exc)
            continue
        gap_rows.append([spin, e_grid, g_grid, e_ref, g_ref, adiabatic_time_bound(table, spin)])
        for e, gap in detect_anticrossings(table, spin, refine=s["refine"]):
            ac_rows.append([spin, e, gap])
    files.append(io.write_csv(out / "min_gaps.csv",
                              ["spin", "epsilon_grid", "gap_grid", "epsilon_refined", "gap_refined", "T_bound"],
                              gap_rows, meta, ts))
    files.append(io.write_csv(out / "anticrossings.csv", ["spin", "epsilon", "gap"], ac_rows, meta, ts))
    return files


def _schedule(s) -> TiltSchedule:
    return TiltSchedule(float(s["T_max"]), float(s["eps_max"]), float(s.get("hold", 0.0)))


def _evolve_job(geom, params, s, label, psi0):
    model = TiltedHubbard(geom, params, half_filling(geom.sites))
    sched = _schedule(s)
    times = sample_times(sched, n=s["samples"])
    return evolve_state(psi0, model, sched, tol=s["tol"], max_step=s["max_step"], times=times,
                        track=label, keep_states=False)


def _lindblad_job(geom, params, s, label, psi0, gamma):
    model = TiltedHubbard(geom, params, half_filling(geom.sites))
    sched = _schedule(s)
    times = sample_times(sched, n=s["samples"])
    return evolve_lindblad(psi0, model, sched, gamma, tol=s["tol"], max_step=s["max_step"], times=times,
                           track=label, keep_states=False)


def _limit_blas():
    threadpool_limits(1)


def _map(fn, jobs, threads):
    """Run ``fn(*job)`` for each job, in a process pool when ``threads > 1``."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs)), initializer=_limit_blas) as ex:
        futs = [ex.submit(fn, *j) for j in jobs]
        return [f.result() for f in futs]


def _run_evolve(cfg, out: Path, meta, ts, threads):
    s = cfg["evolve"]
    geom, params = _geometry(cfg), _params(cfg)
    model = TiltedHubbard(geom, params, half_filling(geom.sites))
    psi = _initial_states(model, s["initial"])
    labels = list(s["initial"])
    trajs = _map(_evolve_job, [(geom, params, s, l, psi[l]) for l in labels], threads)
    files, rows = [], []
    sched = _schedule(s)
    window = s.get("window") or ([sched.T_max, sched.duration] if sched.hold > 0 else None)
    for lab, tr in zip(labels, trajs):
        files.append(io.write_trajectory_csv(tr, out / f"trajectory_{lab}.csv", meta, ts))
        avg = time_averaged_charge(tr, tuple(window)) if window else tr.profiles[-1]
        rows.append([lab, float(np.min(tr.fidelity)), float(tr.fidelity[-1]), tr.steps, *avg])
    n = geom.sites
    files.append(io.write_csv(out / "evolve_summary.csv",
                              ["state_label", "min_fidelity", "final_fidelity", "steps"]
                              + [f"avg_n_{k + 1}" for k in range(n)], rows, meta, ts))
    return files


def _run_lindblad(cfg, out: Path, meta, ts, threads):
    s = cfg["lindblad"]
    geom, params = _geometry(cfg), _params(cfg)
    model = TiltedHubbard(geom, params, half_filling(geom.sites))
    labels = list(dict.fromkeys(list(s["initial"]) + [l for pair in s.get("pairs", []) for l in pair]))
    psi = _initial_states(model, labels)
    gammas = [float(g) for g in s["gammas"]]
    jobs = [(geom, params, s, l, psi[l], g) for g in gammas for l in labels]
    trajs = _map(_lindblad_job, jobs, threads)
    meta = {**meta, "kl_floor": KL_FLOOR}
    files, finals = [], {}
    for (_, _, _, lab, _, g), tr in zip(jobs, trajs):
        tag = f"{lab}_g{io.fmt(g)}"
        files.append(io.write_decoherence_csv(tr, out / f"decoherence_{tag}.csv", meta, ts))
        files.append(io.write_distribution_csv(tr.distributions[-1], out / f"distribution_{tag}.csv", meta, ts))
        finals[(lab, g)] = tr.distributions[-1]
    rows = []
    for a, b in s.get("pairs", []):
        for g in gammas:
            rows.append([a, b, g, kl_distance(finals[(a, g)], finals[(b, g)])])
    files.append(io.write_csv(out / "kl_distance.csv", ["p_state", "q_state", "gamma", "d_bits"], rows, meta, ts))
    return files


def _run_certify(cfg, out: Path, meta, ts, seed):
    s = cfg["certify"]
    params = _params(cfg)
    geom = _geometry(cfg)
    # long chains: one independent plan per block
    block_geoms = [geom]
    if s.get("blocks"):
        block_geoms = [Geometry.chain(s["blocks"])] * (geom.sites // s["blocks"])
    eps = _grid(s)
    step = s["candidate_step"]
    cand = [e for e in eps if e > 0 and abs(e / step - round(e / step)) < 1e-9]
    files, summary = [], []
    cache = {}
    for i, bg in enumerate(block_geoms):
        key = (bg.kind, bg.sites)
        if key not in cache:
            table = sweep_spectrum(bg, params, eps, s["k"], keep_vectors=True)
            cache[key] = table
        table = cache[key]
        tag = f"_block{i + 1}" if len(block_geoms) > 1 else ""
        try:
            plan = plan_tilts(s["targets"], table, s["threshold"], candidates=cand)
        except PlanningError as exc:
            if exc.partial is not None:
                files.append(io.write_plan(exc.partial, out / f"plan{tag}.yaml",
                                           {**meta, "unresolved": [list(p) for p in exc.unresolved]}))
            raise
        singles = single_tilt_separators(s["targets"], table, s["threshold"], candidates=cand)
        files.append(io.write_plan(plan, out / f"plan{tag}.yaml", {**meta, "single_tilt_separators": singles}))
        summary.append([i + 1, len(plan.tilts), " ".join(io.fmt(e) for e in plan.tilts), len(singles)])
        if s.get("simulate"):
            cm = simulate_protocol(plan, bg, params, s["rate"], s["gamma"], s["shots"], seed=seed + i,
                                   trials=s["trials"], hold=s["hold"], tol=s["tol"])
            files.append(io.write_confusion_csv(cm, out / f"confusion{tag}.csv", meta, ts))
    files.append(io.write_csv(out / "certify_summary.csv", ["block", "n_tilts", "tilts", "n_single_tilt_separators"],
                              summary, meta, ts))
    return files


def run_config(config: dict, out, seed: Optional[int] = None, threads: int = 1,
               timestamp: bool = True) -> list[Path]:
    """Validate, run and write outputs; returns the written paths.

    Raises ``ConfigError`` (listing every offending field) before any
    physics runs or any file is written.
    """
    if seed is not None:
        config = {**config, "seed": int(seed)}
    errs = validate_config(config)
    if errs:
        raise ConfigError(errs)
    cfg = resolve_config(config)
    cfg = {k: v for k, v in cfg.items() if k in ("kind", "geometry", "params", "seed", cfg["kind"])}
    out = Path(out)
    meta = {"config": cfg, "seed": cfg["seed"]}
    kind = cfg["kind"]
    with threadpool_limits(max(int(threads), 1)):
        if kind == "spectrum":
            return _run_spectrum(cfg, out, meta, timestamp)
        if kind == "sweep":
            return _run_sweep(cfg, out, meta, timestamp)
        if kind == "evolve":
            return _run_evolve(cfg, out, meta, timestamp, threads)
        if kind == "lindblad":
            return _run_lindblad(cfg, out, meta, timestamp, threads)
        return _run_certify(cfg, out, meta, timestamp, cfg["seed"])


def _error_line(exc: BaseException, **extra) -> str:
    info = {"status": "error", "type": type(exc).__name__, "message": str(exc), **extra}
    if isinstance(exc, ConfigError):
        info["errors"] = exc.errors
    if isinstance(exc, PlanningError):
        info["unresolved"] = [list(p) for p in exc.unresolved]
    t = getattr(exc, "time", None)
    if t is not None:
        info["time"] = t
    return "error: " + json.dumps(info, default=str)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spincert", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in KINDS + ("validate",):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML config file")
        p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="worker budget")
        p.add_argument("--no-timestamp", action="store_true", help="omit timestamps from headers")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config) if args.config else {}
        if args.command == "validate":
            errs = validate_config(config)
            if errs:
                raise ConfigError(errs)
            print(json.dumps({"status": "ok"}))
            return 0
        if config.get("kind", args.command) != args.command:
            raise ConfigError([f"kind: config declares {config['kind']!r}, command is {args.command!r}"])
        config = {**config, "kind": args.command}
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError(["seed: unsigned 64-bit integer required"])
        files = run_config(config, args.out, args.seed, args.threads, timestamp=not args.no_timestamp)
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable line
        print(_error_line(exc, command=args.command), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    print(json.dumps({"status": "ok", "files": [str(f) for f in files]}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
