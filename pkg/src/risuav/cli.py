"""Command line front end: single runs, parameter sweeps, baselines.

Every run writes the same five artifacts into its output directory:

    run_log.json     full iteration log, status, wall times
    convergence.csv  (iter, objective)
    rates.csv        per-slot SNRs and secrecy rates at the final point
    trajectory.csv   (slot, x, y, z)
    solution.json    decision variables plus the node geometry

Sweeps add one sub-directory per (value, seed) pair, a per-run sweep.csv,
and a sweep_summary.csv with mean/min/max of the final objective per
value.  Every CSV starts with a comment line carrying the config digest
and seed so downstream plotting can verify provenance.

Power sweep values accept a dBm suffix and sensing-floor values a dB
suffix ("20dBm", "10dB"); bare numbers are taken as linear units.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .bcd import default_state, run
from .channel import assemble_all
from .metrics import RateReport, SolutionState
from .scenario import (
    ConfigError,
    ScenarioConfig,
    config_digest,
    initial_trajectory,
    load_config,
)

OUTPUT_FILES = (
    "run_log.json",
    "convergence.csv",
    "rates.csv",
    "trajectory.csv",
    "solution.json",
)

SWEEP_PARAMS = ("p_avg", "gamma_sense", "n_ris", "omega", "eps")

EXIT_OK = 0
EXIT_STALLED = 1
EXIT_USAGE = 2


@dataclass
class SweepSpec:
    param: str
    values: list          # tokens as typed on the command line
    reps: int

    def validate(self) -> None:
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")


def parse_sweep_token(param: str, token: str):
    """Returns (numeric label, unit, config transform) for one sweep value."""
    text = token.strip()
    low = text.lower()
    if param == "p_avg":
        if low.endswith("dbm"):
            num = float(text[:-3])
            lin = 10.0 ** ((num - 30.0) / 10.0)
            unit = "dBm"
        else:
            num = float(text)
            lin = num
            unit = "W"
        return num, unit, lambda cfg: replace(
            cfg, p_avg=lin, p_peak=max(cfg.p_peak, lin)
        )
    if param == "gamma_sense":
        if low.endswith("db"):
            num = float(text[:-2])
            lin = 10.0 ** (num / 10.0)
            unit = "dB"
        else:
            num = float(text)
            lin = num
            unit = "linear"
        return num, unit, lambda cfg: replace(cfg, gamma_sense=lin)
    if param == "n_ris":
        num = int(text)
        return num, "count", lambda cfg: replace(cfg, n_ris=num)
    if param == "omega":
        num = float(text)
        return num, "weight", lambda cfg: replace(cfg, omega=num)
    if param == "eps":
        num = float(text)
        return num, "norm", lambda cfg: replace(cfg, eps_eve=num, eps_ut=num)
    raise ConfigError(f"unknown sweep parameter '{param}'")


def _meta_line(cfg: ScenarioConfig) -> str:
    return f"# config={config_digest(cfg)} seed={cfg.seed}"


def _write_csv(path: str, cfg: ScenarioConfig, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_meta_line(cfg) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _prepare_out_dir(out_dir: str, force: bool) -> str | None:
    """Returns an error message when existing artifacts block the write."""
    if os.path.isdir(out_dir):
        clashes = [f for f in OUTPUT_FILES if os.path.exists(os.path.join(out_dir, f))]
        if clashes and not force:
            return (
                f"refusing to overwrite {', '.join(clashes)} in {out_dir}; "
                "pass --force to allow it"
            )
    os.makedirs(out_dir, exist_ok=True)
    return None


def write_outputs(out_dir: str, cfg: ScenarioConfig, sol: SolutionState,
                  log, rep: RateReport) -> None:
    _write_csv(
        os.path.join(out_dir, "convergence.csv"),
        cfg,
        ("iter", "objective"),
        [(i, repr(v)) for i, v in log.convergence_rows()],
    )
    _write_csv(
        os.path.join(out_dir, "rates.csv"),
        cfg,
        ("slot", "snr_iot", "snr_eve", "snr_ut", "snr_echo",
         "r_sec_eve", "r_sec_ut", "r_sum"),
        [
            (
                s,
                repr(float(rep.snr_iot[s])),
                repr(float(rep.snr_eve[s])),
                repr(float(rep.snr_ut[s])),
                repr(float(rep.snr_echo[s])),
                repr(float(rep.r_sec_eve[s])),
                repr(float(rep.r_sec_ut[s])),
                repr(float(rep.r_sum[s])),
            )
            for s in range(cfg.n_slots)
        ],
    )
    _write_csv(
        os.path.join(out_dir, "trajectory.csv"),
        cfg,
        ("slot", "x", "y", "z"),
        [
            (s, repr(p.x), repr(p.y), repr(p.z))
            for s, p in enumerate(sol.waypoints)
        ],
    )

    log_doc = {
        "config_digest": config_digest(cfg),
        "seed": cfg.seed,
        "objective": rep.avg,
    }
    log_doc.update(log.to_json_dict())
    with open(os.path.join(out_dir, "run_log.json"), "w", encoding="utf-8") as fh:
        json.dump(log_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    def c_pairs(vec):
        arr = np.asarray(vec)
        return [[float(z.real), float(z.imag)] for z in arr]

    sol_doc = {
        "config_digest": config_digest(cfg),
        "seed": cfg.seed,
        "status": log.status,
        "objective": rep.avg,
        "max_step": cfg.max_step,
        "geometry": {
            "uav_start": list(cfg.uav_start.vec),
            "uav_final": list(cfg.uav_final.vec),
            "ris": list(cfg.ris_pos.vec),
            "iot": list(cfg.iot_pos.vec),
            "eve": list(cfg.eve_pos.vec),
            "ut": list(cfg.ut_pos.vec),
        },
        "waypoints": [list(p.vec) for p in sol.waypoints],
        "w": [c_pairs(w) for w in sol.w],
        "theta": [c_pairs(t) for t in sol.theta],
        "u": [c_pairs(u) for u in sol.u],
        "flags": list(rep.flags),
    }
    with open(os.path.join(out_dir, "solution.json"), "w", encoding="utf-8") as fh:
        json.dump(sol_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _status_exit(statuses) -> int:
    return EXIT_OK if all(s in ("converged", "max-iters") for s in statuses) else EXIT_STALLED


def _load(config_path: str, seed: int | None) -> ScenarioConfig:
    cfg = load_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
        cfg.validate()
    return cfg


def cmd_run(config_path: str, out_dir: str, seed: int | None = None,
            force: bool = False) -> int:
    cfg = _load(config_path, seed)
    err = _prepare_out_dir(out_dir, force)
    if err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    sol, log, rep = run(cfg)
    write_outputs(out_dir, cfg, sol, log, rep)
    print(f"{log.status}: objective {rep.avg:.6f} after {len(log.iterations)} iterations")
    return _status_exit([log.status])


def baseline_setup(cfg: ScenarioConfig, kind: str):
    """Config, initial state, and frozen blocks for one comparison curve."""
    if kind == "upper":
        relaxed = replace(cfg, gamma_sense=0.0)
        return relaxed, None, ()
    if kind == "mrt":
        # the default start already carries the matched-filter beamformer;
        # freezing the transmit block keeps it for the whole run
        return cfg, None, ("txbf",)
    if kind == "random-ris":
        rng = np.random.default_rng(cfg.seed)
        theta = [
            np.exp(2j * np.pi * rng.uniform(size=cfg.n_ris))
            for _ in range(cfg.n_slots)
        ]
        snaps = assemble_all(cfg, initial_trajectory(cfg), seed=cfg.seed)
        init = default_state(cfg, snaps, theta=theta)
        return cfg, init, ("ris",)
    raise ConfigError(f"unknown baseline kind '{kind}'")


def cmd_baseline(config_path: str, kind: str, out_dir: str,
                 seed: int | None = None, force: bool = False) -> int:
    cfg = _load(config_path, seed)
    err = _prepare_out_dir(out_dir, force)
    if err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    run_cfg, init, frozen = baseline_setup(cfg, kind)
    sol, log, rep = run(run_cfg, init=init, frozen=frozen)
    write_outputs(out_dir, run_cfg, sol, log, rep)
    print(f"{kind} {log.status}: objective {rep.avg:.6f}")
    return _status_exit([log.status])


def _sweep_job(args):
    config_path, param, token, seed, sub_dir = args
    cfg = _load(config_path, seed)
    label, unit, transform = parse_sweep_token(param, token)
    cfg = transform(cfg)
    cfg.validate()
    os.makedirs(sub_dir, exist_ok=True)
    sol, log, rep = run(cfg)
    write_outputs(sub_dir, cfg, sol, log, rep)
    return label, unit, seed, rep.avg, log.status


def cmd_sweep(config_path: str, spec: SweepSpec, out_dir: str,
              seed: int | None = None, force: bool = False,
              workers: int = 1) -> int:
    spec.validate()
    base_cfg = _load(config_path, seed)
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        print(f"refusing to write into non-empty {out_dir}; pass --force",
              file=sys.stderr)
        return EXIT_USAGE
    os.makedirs(out_dir, exist_ok=True)

    jobs = []
    for token in spec.values:
        label, unit, _ = parse_sweep_token(spec.param, token)
        for rep_idx in range(spec.reps):
            job_seed = base_cfg.seed + rep_idx
            sub = os.path.join(
                out_dir, f"{spec.param}={str(label).replace('.', 'p')}_seed={job_seed}"
            )
            jobs.append((config_path, spec.param, token, job_seed, sub))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(job) for job in jobs]

    unit = results[0][1]
    rows = [
        (repr(label), seed_, repr(obj), status)
        for label, _, seed_, obj, status in results
    ]
    _write_csv(
        os.path.join(out_dir, "sweep.csv"),
        base_cfg,
        ("value", "seed", "objective", "status"),
        rows,
    )

    summary = []
    for token in spec.values:
        label, _, _ = parse_sweep_token(spec.param, token)
        objs = [obj for lab, _, _, obj, _ in results if lab == label]
        summary.append(
            (repr(label), repr(float(np.mean(objs))), repr(min(objs)), repr(max(objs)))
        )
    _write_csv(
        os.path.join(out_dir, "sweep_summary.csv"),
        base_cfg,
        ("value", "mean", "min", "max"),
        summary,
    )
    with open(os.path.join(out_dir, "sweep_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "param": spec.param,
                "unit": unit,
                "values": [v for v in spec.values],
                "reps": spec.reps,
                "config_digest": config_digest(base_cfg),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return _status_exit([status for *_, status in results])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risuav",
        description="Worst-case secrecy optimization for a RIS-aided UAV link",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")

    p_run = sub.add_parser("run", help="solve one scenario")
    common(p_run)

    p_sweep = sub.add_parser("sweep", help="rerun while varying one parameter")
    common(p_sweep)
    p_sweep.add_argument("--sweep-param", required=True, choices=SWEEP_PARAMS)
    p_sweep.add_argument(
        "--sweep-values", required=True,
        help="comma-separated values; dBm/dB suffixes allowed",
    )
    p_sweep.add_argument("--reps", type=int, default=1,
                         help="seeds per sweep point")
    p_sweep.add_argument("--workers", type=int, default=1,
                         help="parallel runs")

    p_base = sub.add_parser("baseline", help="comparison curves")
    common(p_base)
    p_base.add_argument("--kind", required=True,
                        choices=("upper", "mrt", "random-ris"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, seed=args.seed, force=args.force)
        if args.command == "sweep":
            spec = SweepSpec(
                param=args.sweep_param,
                values=[v for v in args.sweep_values.split(",") if v.strip()],
                reps=args.reps,
            )
            return cmd_sweep(args.config, spec, args.out, seed=args.seed,
                             force=args.force, workers=args.workers)
        if args.command == "baseline":
            return cmd_baseline(args.config, args.kind, args.out,
                                seed=args.seed, force=args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
