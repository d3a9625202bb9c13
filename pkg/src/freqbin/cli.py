"""Command-line driver: simulate, tomo, metrics, fringe and report."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import io as fio
from . import pipeline
from .binspace import DensityMatrix, StateError
from .config import ConfigError, ExperimentConfig, load_config
from .measurement import FitError
from .metrics import get_target
from .tomography import UnderdeterminedError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_UNDERDETERMINED = 3
EXIT_NOT_CONVERGED = 4


class _Timer:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.marks: dict[str, float] = {}

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        self.marks[name] = time.perf_counter() - t0
        return out

    def emit(self):
        if self.enabled:
            for k, v in self.marks.items():
                print(f"timing {k}: {v:.3f} s", file=sys.stderr)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args, name: str) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _structured(args) -> bool:
    return args.format == "structured"


def _write_all(files: dict[Path, str]) -> None:
    # everything is rendered before the first write
    for path, text in files.items():
        fio.write_text(path, text)


def _z_text(z, structured: bool) -> str:
    return fio.json_text({"z_counts": np.asarray(z)}) if structured else fio.table_text(z)


def _read_z(path) -> np.ndarray:
    if Path(path).suffix.lower() == ".json":
        data = json.loads(Path(path).read_text())
        if "z_counts" not in data:
            raise fio.SchemaError(f"{path}: missing 'z_counts'")
        return np.asarray(data["z_counts"], dtype=float)
    return fio.read_table(path)


def _ext(args) -> str:
    return ".json" if _structured(args) else ".csv"


def cmd_simulate(args) -> int:
    cfg = _config(args)
    sim = pipeline.simulate(cfg)
    st = _structured(args)
    files = {
        _out(args, "state.json"): sim.rho.to_json() + "\n",
        _out(args, "counts" + _ext(args)): fio.counts_text(sim.records, st),
        _out(args, "settings.csv"): fio.settings_text(sim.settings),
        _out(args, "zcounts" + _ext(args)): _z_text(sim.z_counts, st),
    }
    _write_all(files)
    print(f"simulated D={sim.rho.local_dim}: {len(sim.records)} records, seed {sim.seed}")
    return EXIT_OK


def cmd_tomo(args) -> int:
    cfg = _config(args)
    records = fio.read_counts(args.counts)
    settings = fio.read_settings(args.settings) if args.settings else None
    timer = _Timer(args.timings)
    problem, result = timer.run("reconstruction", pipeline.reconstruct_counts, records, args.dim, cfg, settings)
    truth = DensityMatrix.load(args.truth) if args.truth else None
    log = pipeline.tomography_log(result, truth)
    _write_all(
        {
            _out(args, "rho.json"): result.density.to_json() + "\n",
            _out(args, "tomo_log.json"): fio.json_text(log),
        }
    )
    timer.emit()
    msg = f"reconstructed D={args.dim}: cost {result.cost:.6g}, converged={result.converged}"
    if truth is not None:
        msg += f", fidelity vs truth {log['fidelity_root_vs_truth']:.6f}"
    print(msg)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _metrics(args, cfg, rho, target, z, records):
    problem = rate = None
    if records is not None:
        problem = pipeline.tomography_problem(records, target.dimension, cfg)
        pred = problem.scale * problem.probabilities(rho.matrix)
        rate = float(problem.observed.sum() / pred.sum())
    resamples = cfg.metrics.resamples if args.resamples is None else args.resamples
    seed = cfg.seed_for("metrics") if resamples > 0 else (cfg.metrics.seed or cfg.seed or 0)
    return pipeline.metrics_report(rho, target, z, cfg.metrics.cglmp, resamples, seed, problem, rate)


def _report_text(report, structured: bool) -> str:
    data = report.as_dict()
    return fio.json_text(data) if structured else fio.flat_text(data)


def cmd_metrics(args) -> int:
    cfg = _config(args)
    rho = DensityMatrix.load(args.rho)
    target = get_target(args.target)
    z = _read_z(args.zcounts) if args.zcounts else None
    records = fio.read_counts(args.counts) if args.counts else None
    report = _metrics(args, cfg, rho, target, z, records)
    _write_all({_out(args, "metrics" + _ext(args)): _report_text(report, _structured(args))})
    v = report.values
    print(
        f"{target.name}: fidelity {v['fidelity_root']:.4f}, purity {v['purity']:.4f}, S {v['cglmp']:.4f}"
        + (f", witness {v['witness']:.4f} (dimension {v['certified_dimension']})" if "witness" in v else "")
    )
    return EXIT_OK


def cmd_fringe(args) -> int:
    cfg = _config(args)
    pair = tuple(args.pair) if args.pair else tuple(cfg.fringe.pair)
    points = args.points if args.points is not None else cfg.fringe.points
    half = args.half_spacing or cfg.fringe.half_spacing
    spacings = args.spacings or cfg.fringe.spacings_ghz
    runs = pipeline.fringe_runs(cfg, pair, points, half, spacings)
    st = _structured(args)
    files = {}
    summary = []
    for run in runs:
        tag = f"{run.spacing_ghz:g}GHz"
        files[_out(args, f"fringe_{tag}" + _ext(args))] = fio.fringe_text(run.series, st)
        summary.append(
            {
                "spacing_ghz": run.spacing_ghz,
                "visibility": run.visibility,
                "stderr": run.stderr,
                "phase_rad": run.phase,
                "entangled": run.entangled,
            }
        )
    if st:
        files[_out(args, "fringe_fit.json")] = fio.json_text({"pair": list(pair), "half_spacing": half, "fits": summary})
    else:
        rows = [(s["spacing_ghz"], s["visibility"], s["stderr"], s["phase_rad"], int(s["entangled"])) for s in summary]
        files[_out(args, "fringe_fit.csv")] = fio._csv_text(
            ("spacing_ghz", "visibility", "stderr", "phase_rad", "entangled"),
            [tuple(fio._fmt(x) if isinstance(x, float) else x for x in r) for r in rows],
        )
    _write_all(files)
    for s in summary:
        flag = "entangled" if s["entangled"] else "not certified"
        print(f"spacing {s['spacing_ghz']:g} GHz: V = {s['visibility']:.4f} +- {s['stderr']:.4f} ({flag})")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _config(args)
    timer = _Timer(args.timings)
    sim = timer.run("simulate", pipeline.simulate, cfg)
    target = pipeline.config_target(cfg)
    d = sim.rho.local_dim
    problem, result = timer.run("tomography", pipeline.reconstruct_counts, sim.records, d, cfg)
    resamples = cfg.metrics.resamples if args.resamples is None else args.resamples
    seed = cfg.seed_for("metrics") if resamples > 0 else 0
    report = timer.run(
        "metrics",
        pipeline.metrics_report,
        result.density,
        target,
        sim.z_counts,
        cfg.metrics.cglmp,
        resamples,
        seed,
        problem if resamples > 1 else None,
        result.rate,
    )
    fringes = timer.run("fringe", pipeline.fringe_runs, cfg, cfg.fringe.pair, cfg.fringe.points, cfg.fringe.half_spacing)

    st = _structured(args)
    labels = [f"{m}{n}" for m in range(d) for n in range(d)]
    files = {
        _out(args, "state.json"): sim.rho.to_json() + "\n",
        _out(args, "counts" + _ext(args)): fio.counts_text(sim.records, st),
        _out(args, "rho.json"): result.density.to_json() + "\n",
        _out(args, "rho_real.csv"): fio.matrix_text(labels, labels, result.density.matrix.real),
        _out(args, "rho_imag.csv"): fio.matrix_text(labels, labels, result.density.matrix.imag),
        _out(args, "visibility_vs_spacing.csv"): fio._csv_text(
            ("spacing_ghz", "visibility", "stderr"),
            [(fio._fmt(r.spacing_ghz), fio._fmt(r.visibility), fio._fmt(r.stderr)) for r in fringes],
        ),
    }
    mats = pipeline.correlation_matrices(result.density, target)
    if mats is not None:
        c_e, c_t = mats
        files[_out(args, "mub_experiment.csv")] = fio.matrix_text(c_e.row_labels, c_e.col_labels, c_e.values)
        files[_out(args, "mub_theory.csv")] = fio.matrix_text(c_t.row_labels, c_t.col_labels, c_t.values)
    run_report = {
        "config": cfg.as_dict(),
        "state": {"dimension": d, "target": target.name, "pattern": list(target.pattern)},
        "counts": {
            "records": len(sim.records),
            "total": int(sum(r.counts for r in sim.records)),
            "seed": sim.seed,
        },
        "reconstruction": pipeline.tomography_log(result, sim.rho),
        "metrics": report.as_dict(),
        "fringes": [
            {"spacing_ghz": r.spacing_ghz, "visibility": r.visibility, "stderr": r.stderr, "entangled": r.entangled}
            for r in fringes
        ],
    }
    files[_out(args, "run_report.json")] = fio.json_text(run_report)
    files[_out(args, "metrics" + _ext(args))] = _report_text(report, st)
    _write_all(files)
    timer.emit()
    v = report.values
    print(f"{target.name}: fidelity {v['fidelity_root']:.4f}, purity {v['purity']:.4f}, S {v['cglmp']:.4f}, converged={result.converged}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # the subcommand copies must not reset values given before the subcommand
    def d(value):
        return argparse.SUPPRESS if suppress else value

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=d(None), help="YAML experiment configuration")
    common.add_argument("--seed", type=int, default=d(None), help="override every seed in the config")
    common.add_argument("--out-dir", default=d("."), help="directory for output files")
    common.add_argument(
        "--format", choices=("delimited", "structured"), default=d("delimited"), help="CSV or JSON outputs"
    )
    common.add_argument("--timings", action="store_true", default=d(False), help="print wall-clock timings to stderr")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="freqbin", description="Frequency-bin qudit experiment simulator", parents=[_global_flags(False)])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="simulate the state and tomography counts")

    p = sub.add_parser("tomo", parents=[common], help="reconstruct a density matrix from counts")
    p.add_argument("--counts", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--settings", help="settings table (defaults to the built-in table for --dim)")
    p.add_argument("--truth", help="reference density matrix for the log")

    p = sub.add_parser("metrics", parents=[common], help="certification metrics for a density matrix")
    p.add_argument("--rho", required=True)
    p.add_argument("--target", required=True, help="Phi1..Phi6")
    p.add_argument("--zcounts", help="Z-basis coincidence table")
    p.add_argument("--counts", help="tomography counts for resampled error bars")
    p.add_argument("--resamples", type=int)

    p = sub.add_parser("fringe", parents=[common], help="two-photon interference fringe and visibility fit")
    p.add_argument("--pair", type=int, nargs=2)
    p.add_argument("--points", type=int)
    p.add_argument("--half-spacing", action="store_true")
    p.add_argument("--spacings", type=float, nargs="+", help="bin spacings in GHz")

    p = sub.add_parser("report", parents=[common], help="run simulate, tomo, metrics and fringe end to end")
    p.add_argument("--resamples", type=int)
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "tomo": cmd_tomo,
    "metrics": cmd_metrics,
    "fringe": cmd_fringe,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UnderdeterminedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNDERDETERMINED
    except (ConfigError, fio.SchemaError, StateError, FitError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
