"""Experiment runner: declarative sweeps over schemes, axes, and seeds.

A sweep is described by a JSON spec file (figure tag, axis values,
schemes, seeds, optional scenario/solver overrides).  Cells run on a
bounded worker pool, stream one CSV row each as they finish, and a JSON
sidecar records the spec hash and environment.  ``summarize`` reduces
records to seed means and evaluates the figure's trend assertions.

CLI::

    starwpcn run       --spec spec.json --out results.csv [--workers N]
    starwpcn resume    --spec spec.json --out results.csv [--workers N]
    starwpcn summarize --spec spec.json --out results.csv
    starwpcn validate  --spec spec.json

Exit code 0 requires every cell to succeed and every enabled trend
assertion to hold.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .baselines import (CONVENTIONAL_RIS_POSITION, conventional_geometry,
                        solve_conventional_ris, solve_es_noma_gr, solve_no_ris,
                        _StrippedScenario)
from .channel import (FadingParams, Point3, ScenarioGeometry, REFLECTION,
                      TRANSMISSION, place_users_semicircle)
from .es_noma import EsConfig, algorithm1, bcd_inner
from .model import Scenario, SystemParams, TsSolution
from .ts_tdma import TsConfig, algorithm2

FIGURES = ("convergence", "single_antenna", "vs_N", "vs_M", "vs_tau0",
           "vs_location", "vs_users_tdma")
VARIANTS = ("star", "no_ris", "conventional_ris", "gr")
CSV_COLUMNS = ("cell_key", "spec_hash", "figure", "scheme", "axis_value",
               "seed", "gamma", "user_rates", "time_split", "iterations",
               "wall_time_s", "solver_statuses", "ok", "error")

DEFAULT_SCENARIO = {
    "hap": (0.0, 0.0, 2.0),
    "ris": (10.0, 0.0, 0.0),
    "user_radius": 1.0,
    "n_antennas": 4,
    "n_elements": 16,
    "P_A": 5.0,
    "eta": 0.8,
    "sigma2": 1e-12,
    "reciprocal": True,
    "tau0": 0.3,           # fixed charging time for convergence traces
    "n_users": 2,
}


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    figure: str
    axis: tuple
    schemes: tuple        # of (strategy, variant)
    seeds: tuple
    scenario: dict
    solver: dict

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentSpec":
        try:
            figure = raw["figure"]
            axis = tuple(raw["axis"])
            schemes = tuple((s[0], s[1]) for s in raw["schemes"])
            seeds = tuple(int(s) for s in raw["seeds"])
        except (KeyError, TypeError, IndexError) as exc:
            raise SpecError(f"malformed spec: {exc!r}") from exc
        spec = ExperimentSpec(figure=figure, axis=axis, schemes=schemes,
                              seeds=seeds, scenario=dict(raw.get("scenario", {})),
                              solver=dict(raw.get("solver", {})))
        validate_spec(spec)
        return spec

    @staticmethod
    def load(path: str) -> "ExperimentSpec":
        with open(path) as fh:
            return ExperimentSpec.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"figure": self.figure, "axis": list(self.axis),
                "schemes": [list(s) for s in self.schemes],
                "seeds": list(self.seeds), "scenario": self.scenario,
                "solver": self.solver}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def validate_spec(spec: ExperimentSpec):
    if spec.figure not in FIGURES:
        raise SpecError(f"unknown figure {spec.figure!r}")
    if not spec.axis:
        raise SpecError("axis must be non-empty")
    if not spec.seeds:
        raise SpecError("seeds must be non-empty")
    if not spec.schemes:
        raise SpecError("schemes must be non-empty")
    for strategy, variant in spec.schemes:
        if strategy not in ("es_noma", "ts_tdma"):
            raise SpecError(f"unknown strategy {strategy!r}")
        if variant not in VARIANTS:
            raise SpecError(f"unknown variant {variant!r}")
        if strategy == "ts_tdma" and variant == "gr":
            raise SpecError("randomization variant applies to es_noma only")
        if spec.figure in ("convergence", "vs_tau0") and strategy != "es_noma":
            raise SpecError(f"{spec.figure} sweeps are defined for es_noma schemes")
        if spec.figure == "vs_users_tdma" and strategy != "ts_tdma":
            raise SpecError("multi-user sweeps cover ts_tdma only")
    if spec.figure == "vs_users_tdma" and any(int(k) < 2 for k in spec.axis):
        raise SpecError("user counts must be >= 2")
    if spec.figure == "vs_location":
        lo, hi = 9.0, 11.0  # the fixed users sit at x = 9 and x = 11
        if any(not lo < float(x) < hi for x in spec.axis):
            raise SpecError("surface positions must lie strictly between the users")


def scheme_name(strategy: str, variant: str) -> str:
    return f"{strategy}/{variant}"


def build_scenario(figure: str, axis_value, seed: int, overrides: dict) -> Scenario:
    """Deterministic scenario for one sweep cell."""
    params = {**DEFAULT_SCENARIO, **overrides}
    n_ant = int(params["n_antennas"])
    n_elem = int(params["n_elements"])
    n_users = int(params["n_users"])
    if figure in ("vs_N",):
        n_ant = int(axis_value)
    elif figure in ("vs_M", "single_antenna"):
        n_elem = int(axis_value)
    if figure == "single_antenna":
        n_ant = 1
    if figure == "vs_users_tdma":
        n_users = int(axis_value)

    ris = Point3(*params["ris"])
    if figure == "vs_location":
        ris = Point3(float(axis_value), params["ris"][1], params["ris"][2])
        users = ((Point3(11.0, 0.0, 0.0), TRANSMISSION),
                 (Point3(9.0, 0.0, 0.0), REFLECTION))
    else:
        rng = np.random.default_rng([int(seed), 101])
        tags = tuple((TRANSMISSION, REFLECTION)[i % 2] for i in range(n_users))
        users = place_users_semicircle(rng, ris, tags=tags,
                                       radius=params["user_radius"])
    geometry = ScenarioGeometry(hap=Point3(*params["hap"]), ris=ris, users=users,
                                n_antennas=n_ant, n_elements=n_elem)
    fading_keys = set(FadingParams.__dataclass_fields__)
    fading = FadingParams(**{k: v for k, v in params.items() if k in fading_keys})
    system = SystemParams(P_A=float(params["P_A"]), eta=float(params["eta"]),
                          sigma2=float(params["sigma2"]))
    return Scenario(geometry=geometry, fading=fading, system=system,
                    seed=int(seed), reciprocal=bool(params["reciprocal"]))


def _configs(solver_overrides: dict):
    es_keys = {f for f in EsConfig.__dataclass_fields__}
    ts_keys = {f for f in TsConfig.__dataclass_fields__}
    es_cfg = EsConfig(**{k: v for k, v in solver_overrides.items() if k in es_keys})
    ts_cfg = TsConfig(**{k: v for k, v in solver_overrides.items() if k in ts_keys})
    return es_cfg, ts_cfg


def _variant_scenario_config(variant: str, scenario: Scenario, es_cfg: EsConfig):
    """Rewire scenario/config the way the baseline solvers do, for the
    figure modes that drive the inner loop directly."""
    if variant == "star":
        return scenario, es_cfg
    if variant == "no_ris":
        return _StrippedScenario(**vars(scenario)), es_cfg
    if variant == "conventional_ris":
        shifted = replace(scenario,
                          geometry=conventional_geometry(scenario.geometry))
        return shifted, replace(es_cfg, passive_mode="shared_reflect")
    if variant == "gr":
        return scenario, replace(es_cfg, rank_one_method="gr")
    raise SpecError(f"unknown variant {variant!r}")


def solve_scheme(strategy: str, variant: str, scenario: Scenario,
                 es_cfg: EsConfig, ts_cfg: TsConfig):
    if strategy == "es_noma":
        if variant == "star":
            return algorithm1(scenario, es_cfg)
        if variant == "no_ris":
            return solve_no_ris(scenario, "noma", es_cfg)
        if variant == "conventional_ris":
            return solve_conventional_ris(scenario, "noma", es_cfg)
        if variant == "gr":
            return solve_es_noma_gr(scenario, es_cfg)
    else:
        if variant == "star":
            return algorithm2(scenario, ts_cfg)
        if variant == "no_ris":
            return solve_no_ris(scenario, "tdma", ts_config=ts_cfg)
        if variant == "conventional_ris":
            return solve_conventional_ris(scenario, "tdma", ts_config=ts_cfg)
    raise SpecError(f"unsupported scheme {strategy}/{variant}")


def _record(cell_key, spec_hash, figure, scheme, axis_value, seed, *,
            gamma=float("nan"), user_rates="", time_split="", iterations=0,
            wall_time=0.0, statuses="", ok=True, error=""):
    return {"cell_key": cell_key, "spec_hash": spec_hash, "figure": figure,
            "scheme": scheme, "axis_value": axis_value, "seed": seed,
            "gamma": gamma, "user_rates": user_rates, "time_split": time_split,
            "iterations": iterations, "wall_time_s": round(wall_time, 3),
            "solver_statuses": statuses, "ok": ok, "error": error}


def _solution_fields(solution):
    if isinstance(solution, TsSolution):
        rates = solution.diagnostics.get("rates", [])
        split = ",".join(f"{t:.8g}" for t in solution.tau0) + "|" + \
            ",".join(f"{t:.8g}" for t in solution.tau1)
        iters = solution.diagnostics.get("iterations", 1)
        statuses = ";".join(sorted(set(solution.diagnostics.get("solver_statuses",
                                                                [])))) or "closed_form"
    else:
        rates = solution.diagnostics.get("rates", [])
        split = f"{solution.tau0:.8g}|{solution.tau1:.8g}"
        iters = solution.diagnostics.get("iterations", 0)
        trace = solution.diagnostics.get("trace", [])
        statuses = ";".join(sorted({r["status"] for r in trace})) or "none"
    return ("|".join(f"{r:.10g}" for r in rates), split, iters, statuses)


def run_cell(payload: dict) -> list:
    """Execute one sweep cell; returns one or more record dicts.

    Never raises: failures come back as failure-tagged records so the
    sweep continues.
    """
    spec_hash = payload["spec_hash"]
    figure = payload["figure"]
    strategy, variant = payload["strategy"], payload["variant"]
    scheme = scheme_name(strategy, variant)
    seed = payload["seed"]
    cell_key = payload["cell_key"]
    t0 = time.perf_counter()
    try:
        es_cfg, ts_cfg = _configs(payload["solver"])
        if figure == "convergence":
            scenario = build_scenario(figure, None, seed, payload["scenario"])
            tau0 = float({**DEFAULT_SCENARIO, **payload["scenario"]}["tau0"])
            scn, cfg = _variant_scenario_config(variant, scenario, es_cfg)
            _, sol = bcd_inner(tau0, None, scn, cfg)
            wall = time.perf_counter() - t0
            per_iter = {}
            for rec in sol.diagnostics["trace"]:
                per_iter[rec["iteration"]] = rec["gamma"]
            rates, split, iters, statuses = _solution_fields(sol)
            return [_record(cell_key, spec_hash, figure, scheme, l, seed,
                            gamma=g, user_rates=rates, time_split=split,
                            iterations=iters, wall_time=wall, statuses=statuses)
                    for l, g in sorted(per_iter.items())]
        if figure == "vs_tau0":
            axis_value = float(payload["axis_value"])
            scenario = build_scenario(figure, axis_value, seed, payload["scenario"])
            scn, cfg = _variant_scenario_config(variant, scenario, es_cfg)
            _, sol = bcd_inner(axis_value, None, scn, cfg)
        else:
            axis_value = payload["axis_value"]
            scenario = build_scenario(figure, axis_value, seed, payload["scenario"])
            sol = solve_scheme(strategy, variant, scenario, es_cfg, ts_cfg)
        wall = time.perf_counter() - t0
        rates, split, iters, statuses = _solution_fields(sol)
        return [_record(cell_key, spec_hash, figure, scheme, payload["axis_value"],
                        seed, gamma=sol.gamma, user_rates=rates, time_split=split,
                        iterations=iters, wall_time=wall, statuses=statuses)]
    except Exception as exc:  # failure-tagged record, run continues
        return [_record(cell_key, spec_hash, figure, scheme,
                        payload.get("axis_value"), seed,
                        wall_time=time.perf_counter() - t0, ok=False,
                        error=f"{type(exc).__name__}: {exc}")]


def _cells(spec: ExperimentSpec, seed_base: int = 0) -> list:
    """Cell payloads; one per (scheme, axis, seed) except for the trace
    figures where the axis is produced by the run itself."""
    cells = []
    h = spec.hash()
    for strategy, variant in spec.schemes:
        scheme = scheme_name(strategy, variant)
        for seed in spec.seeds:
            actual_seed = seed_base + seed
            if spec.figure == "convergence":
                cells.append({"cell_key": f"{scheme}#conv#{actual_seed}",
                              "spec_hash": h, "figure": spec.figure,
                              "strategy": strategy, "variant": variant,
                              "axis_value": None, "seed": actual_seed,
                              "scenario": spec.scenario, "solver": spec.solver})
                continue
            for axis_value in spec.axis:
                cells.append({"cell_key": f"{scheme}#{axis_value}#{actual_seed}",
                              "spec_hash": h, "figure": spec.figure,
                              "strategy": strategy, "variant": variant,
                              "axis_value": axis_value, "seed": actual_seed,
                              "scenario": spec.scenario, "solver": spec.solver})
    return cells


def _worker_init():
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")


def _write_sidecar(out_path: str, spec: ExperimentSpec):
    meta = {"spec_hash": spec.hash(), "spec": spec.to_dict(),
            "environment": {"python": sys.version.split()[0],
                            "platform": platform.platform(),
                            "numpy": np.__version__,
                            "package": __version__},
            "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    with open(out_path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)


def _execute(cells, out_path, spec, workers, existing=None):
    records = list(existing or [])
    writer = None
    fh = None
    if out_path:
        mode = "a" if existing else "w"
        fh = open(out_path, mode, newline="")
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if not existing:
            writer.writeheader()
            _write_sidecar(out_path, spec)

    def emit(recs):
        records.extend(recs)
        if writer:
            for r in recs:
                writer.writerow(r)
            fh.flush()

    try:
        if workers <= 1 or len(cells) <= 1:
            for payload in cells:
                emit(run_cell(payload))
        else:
            with ProcessPoolExecutor(max_workers=workers,
                                     initializer=_worker_init) as pool:
                futures = [pool.submit(run_cell, payload) for payload in cells]
                for fut in as_completed(futures):
                    emit(fut.result())
    finally:
        if fh:
            fh.close()
    return records


def run(spec: ExperimentSpec, out_path: str | None = None, workers: int = 1,
        seed_base: int = 0) -> list:
    """Execute every cell of the sweep, streaming records as they finish."""
    validate_spec(spec)
    return _execute(_cells(spec, seed_base), out_path, spec, workers)


def load_records(path: str) -> list:
    with open(path, newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            row["gamma"] = float(row["gamma"]) if row["gamma"] else float("nan")
            row["seed"] = int(row["seed"])
            row["iterations"] = int(row["iterations"] or 0)
            row["wall_time_s"] = float(row["wall_time_s"] or 0.0)
            row["ok"] = row["ok"] in ("True", "true", "1")
            rows.append(row)
        return rows


def resume(spec: ExperimentSpec, out_path: str, workers: int = 1,
           seed_base: int = 0) -> list:
    """Re-run only the cells missing from a partial result file."""
    validate_spec(spec)
    existing = load_records(out_path) if os.path.exists(out_path) else []
    h = spec.hash()
    for row in existing:
        if row["spec_hash"] != h:
            raise SpecError(f"result file hash {row['spec_hash']} does not match "
                            f"spec hash {h}; refusing to resume")
    done = {row["cell_key"] for row in existing}
    missing = [c for c in _cells(spec, seed_base) if c["cell_key"] not in done]
    return _execute(missing, out_path, spec, workers, existing=existing)


def summarize(records: list, spec: ExperimentSpec) -> dict:
    """Seed-averaged table plus the figure's trend assertions."""
    if not records:
        raise SpecError("no records to summarize")
    hashes = {r["spec_hash"] for r in records}
    if len(hashes) > 1:
        raise SpecError(f"records mix spec hashes: {sorted(hashes)}")
    failures = [r for r in records if not r["ok"]]
    groups = {}
    for r in records:
        if not r["ok"]:
            continue
        groups.setdefault((r["scheme"], r["axis_value"]), []).append(r["gamma"])
    table = []
    for (scheme, axis_value), gammas in sorted(groups.items(),
                                               key=lambda kv: (kv[0][0],
                                                               _axis_key(kv[0][1]))):
        arr = np.array(gammas)
        table.append({"scheme": scheme, "axis_value": axis_value,
                      "n": len(arr), "gamma_mean": float(arr.mean()),
                      "gamma_std": float(arr.std(ddof=0))})
    assertions = _trend_assertions(spec, table, records)
    return {"table": table, "assertions": assertions,
            "n_failures": len(failures),
            "failed_cells": [r["cell_key"] for r in failures]}


def _axis_key(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return math.inf


def _means_by_scheme(table):
    out = {}
    for row in table:
        out.setdefault(row["scheme"], []).append((_axis_key(row["axis_value"]),
                                                  row["gamma_mean"]))
    return {k: [g for _, g in sorted(v)] for k, v in out.items()}


def _trend_assertions(spec, table, records) -> list:
    means = _means_by_scheme(table)
    checks = []

    def add(name, ok, detail):
        checks.append({"name": name, "ok": bool(ok), "detail": detail})

    if spec.figure in ("vs_M", "vs_N"):
        for scheme, seq in means.items():
            ok = all(b >= a - 1e-9 for a, b in zip(seq, seq[1:]))
            add(f"monotone_{spec.figure}[{scheme}]", ok,
                "seed-mean gamma non-decreasing along the axis: "
                + ", ".join(f"{g:.4f}" for g in seq))
    elif spec.figure == "vs_tau0":
        for scheme, seq in means.items():
            add(f"unimodal_tau0[{scheme}]", _is_unimodal(seq),
                "seed-mean gamma rises then falls: "
                + ", ".join(f"{g:.4f}" for g in seq))
    elif spec.figure == "vs_location":
        for scheme, seq in means.items():
            add(f"near_far_user[{scheme}]", seq[-1] > seq[0],
                f"gamma near the far user {seq[-1]:.4f} > near the close user "
                f"{seq[0]:.4f}")
    elif spec.figure == "single_antenna":
        for strat_pair in (("ts_tdma/star", "es_noma/star"),):
            ts, es = strat_pair
            if ts in means and es in means:
                add("tdma_beats_noma_single_antenna",
                    all(t > e for t, e in zip(means[ts], means[es])),
                    f"{ts} {means[ts]} vs {es} {means[es]}")
    elif spec.figure == "vs_users_tdma":
        for scheme, seq in means.items():
            ok = all(b <= a + 1e-9 for a, b in zip(seq, seq[1:]))
            add(f"monotone_users[{scheme}]", ok,
                "gamma non-increasing in the user count: "
                + ", ".join(f"{g:.4f}" for g in seq))
    elif spec.figure == "convergence":
        eps0 = float(spec.solver.get("eps_inner", 1e-5))
        per_cell = {}
        for r in records:
            if r["ok"]:
                per_cell.setdefault(r["cell_key"], []).append(
                    (_axis_key(r["axis_value"]), r["gamma"]))
        good = 0
        for key, pts in per_cell.items():
            seq = [g for _, g in sorted(pts)]
            deltas = [abs(b - a) for a, b in zip(seq, seq[1:])]
            if len(seq) <= 15 or any(d < eps0 for d in deltas[:14]):
                good += 1
        frac = good / max(len(per_cell), 1)
        add("stabilizes_within_15", frac >= 0.8,
            f"{good}/{len(per_cell)} traces stabilized within 15 iterations")
    return checks


def _is_unimodal(seq, tol=1e-9) -> bool:
    peak = int(np.argmax(seq))
    rising = all(b >= a - tol for a, b in zip(seq[:peak], seq[1:peak + 1]))
    falling = all(b <= a + tol for a, b in zip(seq[peak:], seq[peak + 1:]))
    return rising and falling


def print_summary(summary: dict, bandwidth: float = 1e6, file=sys.stdout):
    print(f"{'scheme':28s} {'axis':>8s} {'n':>3s} {'gamma':>10s} {'std':>9s} "
          f"{'Mbit/s':>9s}", file=file)
    for row in summary["table"]:
        print(f"{row['scheme']:28s} {str(row['axis_value']):>8s} {row['n']:>3d} "
              f"{row['gamma_mean']:>10.4f} {row['gamma_std']:>9.4f} "
              f"{row['gamma_mean'] * bandwidth / 1e6:>9.3f}", file=file)
    if summary["n_failures"]:
        print(f"FAILED cells ({summary['n_failures']}): "
              f"{summary['failed_cells']}", file=file)
    for chk in summary["assertions"]:
        mark = "PASS" if chk["ok"] else "FAIL"
        print(f"[{mark}] {chk['name']}: {chk['detail']}", file=file)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="starwpcn",
        description="max-min throughput sweeps for surface-assisted "
                    "wireless powered networks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "resume", "summarize", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--spec", required=True, help="JSON sweep description")
        if name != "validate":
            p.add_argument("--out", required=name != "summarize",
                           help="CSV results path")
        if name in ("run", "resume"):
            p.add_argument("--workers", type=int, default=1)
            p.add_argument("--seed-base", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        spec = ExperimentSpec.load(args.spec)
    except (OSError, json.JSONDecodeError, SpecError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(f"spec ok: figure={spec.figure} cells="
              f"{len(_cells(spec))} hash={spec.hash()}")
        return 0
    if args.command == "run":
        records = run(spec, args.out, workers=args.workers,
                      seed_base=args.seed_base)
    elif args.command == "resume":
        records = resume(spec, args.out, workers=args.workers,
                         seed_base=args.seed_base)
    else:
        records = load_records(args.out)

    summary = summarize(records, spec)
    bandwidth = float(spec.scenario.get("bandwidth", 1e6))
    print_summary(summary, bandwidth=bandwidth)
    ok = summary["n_failures"] == 0 and all(c["ok"] for c in summary["assertions"])
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
