import json
import math
import subprocess
import sys

import numpy as np
import pytest

from freqbin import io as fio
from freqbin.binspace import DensityMatrix
from freqbin.cli import EXIT_NOT_CONVERGED, EXIT_OK, EXIT_UNDERDETERMINED, EXIT_VALIDATION, main
from freqbin.metrics import get_target

FAST = """\
seed: 7
source:
  target: {target}
  indistinguishability: {ind}
measurement:
  rate_hz: {rate}
tomography:
  particles: 20
  iterations: 100
metrics:
  resamples: 4
"""


def write_config(tmp_path, target="Phi1", ind=0.95, rate=1.0e4, extra=""):
    path = tmp_path / f"{target}_{ind}_{rate}.yaml"
    path.write_text(FAST.format(target=target, ind=ind, rate=rate) + extra)
    return path


def run(*argv):
    return main([str(a) for a in argv])


def read_dir(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.is_file()}


def test_simulate_outputs(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert run("--config", cfg, "--out-dir", out, "simulate") == EXIT_OK
    assert set(read_dir(out)) == {"state.json", "counts.csv", "settings.csv", "zcounts.csv"}
    assert len(fio.read_counts(out / "counts.csv")) == 20
    DensityMatrix.load(out / "state.json")


def test_simulate_phi2_rows(tmp_path):
    cfg = write_config(tmp_path, "Phi2")
    assert run("--config", cfg, "--out-dir", tmp_path / "o", "simulate") == EXIT_OK
    recs = fio.read_counts(tmp_path / "o" / "counts.csv")
    assert len({(r.setting_id, r.m, r.n) for r in recs}) == 153


def test_ring_off_zeroes_its_bin(tmp_path):
    # ring R2 feeds the middle bin of the three measured for Phi2
    cfg = write_config(tmp_path, "Phi2")
    text = cfg.read_text().replace("  indistinguishability", "  rings_off: [2]\n  indistinguishability")
    cfg.write_text(text)
    assert run("--config", cfg, "--out-dir", tmp_path / "o", "simulate") == EXIT_OK
    recs = fio.read_counts(tmp_path / "o" / "counts.csv")
    z_rows = [r for r in recs if r.setting_id == "g17"]
    assert all(r.counts == 0 for r in z_rows if r.m == 1 or r.n == 1)
    assert sum(r.counts for r in z_rows) > 0
    z = fio.read_table(tmp_path / "o" / "zcounts.csv")
    assert z[1, :].sum() == 0 and z[:, 1].sum() == 0


def test_seed_required_for_noisy_simulation(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("source:\n  target: Phi1\n")
    assert run("--config", cfg, "--out-dir", tmp_path / "o", "simulate") == EXIT_VALIDATION
    assert "seed" in capsys.readouterr().err
    assert not (tmp_path / "o" / "counts.csv").exists()


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 1\nsource:\n  colour: blue\n")
    assert run("--config", cfg, "--out-dir", tmp_path, "simulate") == EXIT_VALIDATION
    assert "source.colour" in capsys.readouterr().err


def test_tomo_round_trip(tmp_path, capsys):
    cfg = write_config(tmp_path, extra="")
    cfg.write_text(cfg.read_text().replace("measurement:\n", "measurement:\n  noiseless: true\n").replace("0.95", "1.0"))
    out = tmp_path / "o"
    assert run("--config", cfg, "--out-dir", out, "simulate") == EXIT_OK
    code = run("--config", cfg, "--out-dir", out, "tomo", "--counts", out / "counts.csv", "--dim", 2, "--truth", out / "state.json")
    assert code == EXIT_OK
    log = json.loads((out / "tomo_log.json").read_text())
    assert log["fidelity_root_vs_truth"] >= 0.995
    assert log["seed"] == 7 and log["converged"]
    assert "fidelity vs truth" in capsys.readouterr().out


def test_tomo_underdetermined(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "o"
    run("--config", cfg, "--out-dir", out, "simulate")
    lines = (out / "counts.csv").read_text().splitlines()
    (out / "short.csv").write_text("\n".join(lines[:9]) + "\n")
    code = run("--config", cfg, "--out-dir", out, "tomo", "--counts", out / "short.csv", "--dim", 2)
    assert code == EXIT_UNDERDETERMINED
    assert "need at least 16" in capsys.readouterr().err


def test_tomo_dimension_mismatch(tmp_path):
    cfg = write_config(tmp_path, "Phi2")
    out = tmp_path / "o"
    run("--config", cfg, "--out-dir", out, "simulate")
    assert run("--config", cfg, "--out-dir", out, "tomo", "--counts", out / "counts.csv", "--dim", 2) == EXIT_VALIDATION


def test_tomo_not_converged(tmp_path):
    cfg = write_config(tmp_path, extra="")
    cfg.write_text(cfg.read_text().replace("  iterations: 100\n", "  iterations: 100\n  cost_threshold: 1.0e-9\n"))
    out = tmp_path / "o"
    run("--config", cfg, "--out-dir", out, "simulate")
    assert run("--config", cfg, "--out-dir", out, "tomo", "--counts", out / "counts.csv", "--dim", 2) == EXIT_NOT_CONVERGED
    assert (out / "rho.json").exists()


def test_metrics_ideal_phi4(tmp_path):
    t = get_target("Phi4")
    rho_path = tmp_path / "rho.json"
    t.density().save(rho_path)
    z = np.real(np.diag(t.density().matrix)).reshape(3, 3) * 1e4
    (tmp_path / "z.csv").write_text(fio.table_text(z))
    code = run("--seed", 1, "--out-dir", tmp_path, "--format", "structured", "metrics", "--rho", rho_path, "--target", "Phi4", "--zcounts", tmp_path / "z.csv", "--resamples", 20)
    assert code == EXIT_OK
    rep = json.loads((tmp_path / "metrics.json").read_text())
    assert rep["fidelity_root"]["value"] == pytest.approx(1.0, abs=1e-9)
    assert rep["cglmp"]["value"] == pytest.approx(2 * math.sqrt(2), abs=1e-4)
    assert rep["certified_dimension"]["value"] == 2
    assert rep["seed"] == 1 and rep["resamples"] == 20
    assert rep["witness"]["error"] is not None


def test_metrics_mixed_phi1(tmp_path):
    DensityMatrix.maximally_mixed(2).save(tmp_path / "rho.json")
    assert run("--seed", 2, "--out-dir", tmp_path, "metrics", "--rho", tmp_path / "rho.json", "--target", "Phi1") == EXIT_OK
    rows = {line.split(",")[0]: line.split(",")[1] for line in (tmp_path / "metrics.csv").read_text().splitlines()[1:]}
    assert float(rows["fidelity_root"]) == pytest.approx(0.5, abs=1e-9)
    assert float(rows["cglmp"]) <= 2


def test_metrics_bad_target(tmp_path):
    DensityMatrix.maximally_mixed(2).save(tmp_path / "rho.json")
    assert run("--seed", 2, "--out-dir", tmp_path, "metrics", "--rho", tmp_path / "rho.json", "--target", "Phi9") == EXIT_VALIDATION


def test_metrics_with_counts_resampling(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "o"
    run("--config", cfg, "--out-dir", out, "simulate")
    run("--config", cfg, "--out-dir", out, "tomo", "--counts", out / "counts.csv", "--dim", 2)
    code = run("--config", cfg, "--out-dir", out, "--format", "structured", "metrics", "--rho", out / "rho.json", "--target", "Phi1", "--counts", out / "counts.csv", "--zcounts", out / "zcounts.csv")
    assert code == EXIT_OK
    rep = json.loads((out / "metrics.json").read_text())
    for key in ("fidelity_root", "purity", "cglmp", "mub_fidelity", "witness"):
        assert rep[key]["error"] > 0


def fit_rows(path):
    lines = path.read_text().splitlines()[1:]
    return [tuple(float(x) for x in line.split(",")) for line in lines]


def test_fringe_spacing_sweep(tmp_path):
    cfg = write_config(tmp_path, "Phi1", 0.97, 1.0e5)
    assert run("--config", cfg, "--out-dir", tmp_path / "o", "fringe", "--spacings", 25, 50, 75) == EXIT_OK
    rows = fit_rows(tmp_path / "o" / "fringe_fit.csv")
    assert [r[0] for r in rows] == [25.0, 50.0, 75.0]
    vis = np.array([r[1] for r in rows])
    err = np.array([r[2] for r in rows])
    assert np.all(vis > 0.95)
    assert np.ptp(vis) <= 3 * math.sqrt(2) * err.max()
    for name in ("fringe_25GHz.csv", "fringe_50GHz.csv", "fringe_75GHz.csv"):
        assert len(fio.read_fringe(tmp_path / "o" / name).thetas) == 36


def test_half_spacing_fringe_flags_entanglement(tmp_path, capsys):
    cfg = write_config(tmp_path, "Phi5", 0.87, 1.0e5)
    code = run("--config", cfg, "--out-dir", tmp_path / "o", "--format", "structured", "fringe", "--pair", 2, 3, "--half-spacing")
    assert code == EXIT_OK
    fit = json.loads((tmp_path / "o" / "fringe_fit.json").read_text())
    assert fit["half_spacing"] and fit["fits"][0]["entangled"]
    assert "entangled" in capsys.readouterr().out


def test_fringe_point_counts(tmp_path):
    cfg = write_config(tmp_path, "Phi1", 0.9, 1.0e5)
    assert run("--config", cfg, "--out-dir", tmp_path / "a", "fringe", "--points", 8) == EXIT_OK
    assert run("--config", cfg, "--out-dir", tmp_path / "b", "fringe", "--points", 4) == EXIT_VALIDATION


def command_lines(tmp_path, cfg, out):
    return [
        ["--config", cfg, "--out-dir", out, "simulate"],
        ["--config", cfg, "--out-dir", out, "tomo", "--counts", out / "counts.csv", "--dim", 2, "--truth", out / "state.json"],
        ["--config", cfg, "--out-dir", out, "metrics", "--rho", out / "rho.json", "--target", "Phi1", "--zcounts", out / "zcounts.csv", "--counts", out / "counts.csv"],
        ["--config", cfg, "--out-dir", out, "fringe", "--spacings", 15, 25],
        ["--config", cfg, "--out-dir", out / "report", "report"],
    ]


@pytest.mark.parametrize("fmt", ["delimited", "structured"])
def test_every_command_is_byte_reproducible(tmp_path, fmt):
    cfg = write_config(tmp_path)
    outputs = []
    for run_dir in ("first", "second"):
        out = tmp_path / run_dir
        for argv in command_lines(tmp_path, cfg, out):
            if fmt == "structured":
                argv = ["--format", "structured"] + argv
                argv = [a if not str(a).endswith("counts.csv") else str(a).replace(".csv", ".json") for a in argv]
            assert run(*argv) == EXIT_OK
        outputs.append({**read_dir(out), **{"report/" + k: v for k, v in read_dir(out / "report").items()}})
    first, second = outputs
    assert set(first) == set(second)
    assert "report/run_report.json" in first
    for name in first:
        assert first[name] == second[name], name


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path)
    run("--config", cfg, "--seed", 11, "--out-dir", tmp_path / "a", "simulate")
    run("--config", cfg, "--out-dir", tmp_path / "b", "simulate", "--seed", 11)
    run("--config", cfg, "--out-dir", tmp_path / "c", "simulate")
    a = (tmp_path / "a" / "counts.csv").read_bytes()
    assert a == (tmp_path / "b" / "counts.csv").read_bytes()
    assert a != (tmp_path / "c" / "counts.csv").read_bytes()


def test_console_entry_point(tmp_path):
    cfg = write_config(tmp_path)
    proc = subprocess.run(
        [sys.executable, "-m", "freqbin", "--config", str(cfg), "--out-dir", str(tmp_path / "o"), "simulate"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "20 records" in proc.stdout
