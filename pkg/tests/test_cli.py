import json

import numpy as np
import pytest

from fleetrec.campaign import SyntheticFleetSpec, generate_synthetic_fleet
from fleetrec.cli import main
from fleetrec.io import load_matrix, save_matrix
from fleetrec.matrix import MaskedMatrix


def masked(values, mask):
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    return MaskedMatrix(np.where(mask, values, np.nan), mask)


def cluster_csv(path):
    rng = np.random.default_rng(11)
    rows = []
    for center in range(3):
        base = rng.normal(size=12) + 10.0 * center
        for _ in range(4):
            rows.append(base + 1e-3 * rng.normal(size=12))
    m = np.asarray(rows)
    save_matrix(MaskedMatrix(m, np.ones(m.shape, dtype=bool)), path)
    return path


def rank1_csv(path, rows=5, cols=8, seed=3):
    rng = np.random.default_rng(seed)
    values = np.outer(rng.uniform(1, 2, rows), rng.uniform(1, 2, cols))
    mask = rng.random((rows, cols)) < 0.7
    mask[:, 0] = True
    m = masked(values, mask)
    save_matrix(m, path)
    return values, m


def test_no_command_prints_help(capsys):
    assert main([]) == 1
    out = capsys.readouterr().out
    assert "usage" in out


def test_unknown_command_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert "error:" in capsys.readouterr().err


def test_missing_required_flag_is_usage_error(capsys):
    assert main(["evaluate", "--trace", "t.json"]) == 1
    assert "error:" in capsys.readouterr().err


def test_missing_file_exits_1(tmp_path, capsys):
    assert main(["estimate-rank", str(tmp_path / "absent.csv")]) == 1
    assert "error:" in capsys.readouterr().err


def test_estimate_rank_reports_clusters(tmp_path, capsys):
    path = cluster_csv(tmp_path / "fleet.csv")
    assert main(["estimate-rank", str(path)]) == 0
    out = capsys.readouterr().out
    assert "estimated rank: 3" in out
    assert "kernel width sigma:" in out
    assert "eigenvalue" in out


def test_complete_writes_filled_matrix(tmp_path, capsys):
    path = tmp_path / "m.csv"
    values, m = rank1_csv(path)
    assert main(["complete", str(path), "--rank", "1", "--lambda", "1e-9"]) == 0
    out = capsys.readouterr().out
    assert "completed at rank 1" in out
    target = tmp_path / "m_completed.csv"
    assert f"wrote {target}" in out
    filled = load_matrix(target)
    assert filled.mask.all()
    np.testing.assert_allclose(filled.values, values, rtol=1e-3, atol=1e-6)


def test_complete_explicit_output_and_config(tmp_path, capsys):
    path = tmp_path / "m.csv"
    rank1_csv(path)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("rank = 1\nlambda = 1e-06\n")
    out_path = tmp_path / "filled.csv"
    code = main(
        ["complete", str(path), "--config", str(cfg), "-o", str(out_path)]
    )
    assert code == 0
    assert "penalty 1e-06" in capsys.readouterr().out
    assert out_path.exists()


def test_complete_flag_overrides_config(tmp_path, capsys):
    path = tmp_path / "m.csv"
    rank1_csv(path)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("rank = 1\nlambda = 0.5\n")
    code = main(
        ["complete", str(path), "--config", str(cfg), "--lambda", "0.125"]
    )
    assert code == 0
    assert "penalty 0.125" in capsys.readouterr().out


def test_recommend_table(tmp_path, capsys):
    path = tmp_path / "m.csv"
    rank1_csv(path)
    assert main(["recommend", str(path), "--rank", "1"]) == 0
    out = capsys.readouterr().out
    assert "machine" in out and "flat_index" in out and "predicted" in out
    # 5 machines, each with at least one unobserved cell on this seed
    assert len(out.strip().splitlines()) == 6


def test_recommend_limited_row_count(tmp_path, capsys):
    path = tmp_path / "m.csv"
    rank1_csv(path)
    assert main(["recommend", str(path), "--rank", "1", "--limited", "3"]) == 0
    out = capsys.readouterr().out
    assert len(out.strip().splitlines()) == 4


def test_recommend_exhausted_fleet(tmp_path, capsys):
    path = tmp_path / "m.csv"
    values = np.ones((3, 4))
    save_matrix(MaskedMatrix(values, np.ones((3, 4), dtype=bool)), path)
    assert main(["recommend", str(path)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines() == [
        "machine 1: exhausted",
        "machine 2: exhausted",
        "machine 3: exhausted",
    ]


def test_recommend_grid_mismatch(tmp_path, capsys):
    path = tmp_path / "m.csv"
    rank1_csv(path)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("axis1.values = 1,2,3\n")
    assert main(["recommend", str(path), "--rank", "1", "--config", str(cfg)]) == 1
    assert "grid has 3 cells" in capsys.readouterr().err


SIM_CONFIG = (
    "axis1.name = speed\n"
    "axis1.unit = mm/s\n"
    "axis1.values = 50,75,100\n"
    "axis2.name = acceleration\n"
    "axis2.unit = mm/s^2\n"
    "axis2.values = 4000,4500,5000,5500\n"
    "machines = 6\n"
    "true_rank = 2\n"
    "rank = 2\n"
    "budget = 4\n"
)


def run_simulate(tmp_path, name, extra=()):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text(SIM_CONFIG)
    out = tmp_path / name
    code = main(
        ["simulate", "--config", str(cfg), "--out-dir", str(out), *extra]
    )
    return code, out


def test_simulate_writes_all_outputs(tmp_path, capsys):
    code, out = run_simulate(tmp_path, "run1")
    assert code == 0
    for name in (
        "collaborative_trace.json",
        "baseline_trace.json",
        "report.json",
        "report.csv",
    ):
        assert (out / name).exists()
    printed = capsys.readouterr().out
    assert "collaborative mean trials:" in printed
    assert "non-collaborative mean trials:" in printed
    report = json.loads((out / "report.json").read_text())
    assert report["budget"] == 4
    assert report["machines"] == 6
    assert report["config"]["grid"][0]["name"] == "speed"


def test_simulate_reruns_byte_identical(tmp_path):
    _, first = run_simulate(tmp_path, "run1")
    _, second = run_simulate(tmp_path, "run2")
    for name in (
        "collaborative_trace.json",
        "baseline_trace.json",
        "report.json",
        "report.csv",
    ):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_simulate_budget_zero(tmp_path):
    code, out = run_simulate(tmp_path, "empty", extra=("--budget", "0"))
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["collaborative"]["trials_to_optimum"] == [None] * 6
    trace = json.loads((out / "collaborative_trace.json").read_text())
    assert trace["rounds"] == []


def test_simulate_limited_mode(tmp_path):
    code, out = run_simulate(tmp_path, "lim", extra=("--limited", "2"))
    assert code == 0
    trace = json.loads((out / "collaborative_trace.json").read_text())
    assert trace["config"]["mode"] == "limited"
    for record in trace["rounds"]:
        assert len(record["selections"]) <= 2


def test_simulate_with_truth_file_and_evaluate(tmp_path, capsys):
    spec = SyntheticFleetSpec(machines=6, grid_size=12, true_rank=2, seed=9)
    truth, _ = generate_synthetic_fleet(spec)
    truth_path = tmp_path / "truth.csv"
    save_matrix(
        MaskedMatrix(truth, np.ones(truth.shape, dtype=bool)), truth_path
    )
    cfg = tmp_path / "sim.cfg"
    cfg.write_text(SIM_CONFIG)
    out = tmp_path / "run"
    code = main(
        [
            "simulate",
            "--config",
            str(cfg),
            "--truth",
            str(truth_path),
            "--out-dir",
            str(out),
        ]
    )
    assert code == 0
    capsys.readouterr()

    eval_out = tmp_path / "eval"
    code = main(
        [
            "evaluate",
            "--trace",
            str(out / "collaborative_trace.json"),
            "--baseline",
            str(out / "baseline_trace.json"),
            "--truth",
            str(truth_path),
            "--out-dir",
            str(eval_out),
        ]
    )
    assert code == 0
    printed = capsys.readouterr().out
    assert "collaborative" in printed and "non_collaborative" in printed
    lines = (eval_out / "report.csv").read_text().strip().splitlines()
    assert lines[0] == "machine,collaborative,non_collaborative"
    assert lines[-1].startswith("average,")
    # 6 machines plus header plus average row
    assert len(lines) == 8


def test_evaluate_rejects_partial_truth(tmp_path, capsys):
    path = tmp_path / "truth.csv"
    rank1_csv(path)
    trace = tmp_path / "trace.json"
    trace.write_text('{"config": {}, "rounds": [], "final_mask": []}')
    code = main(["evaluate", "--trace", str(trace), "--truth", str(path)])
    assert code == 1
    assert "fully observed" in capsys.readouterr().err


def test_numeric_failure_exits_2(tmp_path, capsys):
    path = tmp_path / "huge.csv"
    rng = np.random.default_rng(0)
    values = rng.normal(size=(4, 6)) * 1e300
    mask = np.ones((4, 6), dtype=bool)
    mask[0, 0] = False
    save_matrix(masked(values, mask), path)
    with np.errstate(all="ignore"):
        code = main(["complete", str(path), "--rank", "1", "--lambda", "0"])
    assert code == 2
    assert "numeric failure" in capsys.readouterr().err


SCAN_LINES = [
    "machine_id,condition_index,surface_id,sample_ordinal,displacement_mm",
    "0,0,x,1,0.0",
    "0,0,x,2,2.0",
    "0,0,y,1,0.0",
    "0,0,y,2,2.0",
    "0,1,x,1,0.0",
    "0,1,x,2,4.0",
    "0,1,y,1,0.0",
    "0,1,y,2,4.0",
    "1,0,x,1,0.0",
    "1,0,x,2,6.0",
    "1,0,y,1,0.0",
    "1,0,y,2,6.0",
    "1,1,x,1,0.0",
    "1,1,x,2,8.0",
    "1,1,y,1,0.0",
    "1,1,y,2,8.0",
]

TIME_LINES = [
    "machine_id,condition_index,seconds",
    "0,0,10.0",
    "0,1,20.0",
    "1,0,40.0",
    "1,1,20.0",
]


def test_build_utility_command(tmp_path, capsys):
    scans = tmp_path / "scans.csv"
    scans.write_text("\n".join(SCAN_LINES) + "\n")
    times = tmp_path / "times.csv"
    times.write_text("\n".join(TIME_LINES) + "\n")
    cfg = tmp_path / "grid.cfg"
    cfg.write_text("axis1.name = speed\naxis1.values = 50,75\n")
    out = tmp_path / "built"
    code = main(
        [
            "build-utility",
            "--scans",
            str(scans),
            "--times",
            str(times),
            "--config",
            str(cfg),
            "--out-dir",
            str(out),
        ]
    )
    assert code == 0
    assert "wrote 2x2 utility matrix (4 observed)" in capsys.readouterr().out
    utility = load_matrix(out / "utility.csv")
    assert utility.mask.all()
    assert (utility.values < 0).all()
    assert (out / "quality_norm.csv").exists()
    assert (out / "time_norm.csv").exists()


def test_build_utility_names_offenders(tmp_path, capsys):
    scans = tmp_path / "scans.csv"
    scans.write_text(
        "\n".join(line for line in SCAN_LINES if not line.startswith("1,1,y"))
        + "\n"
    )
    times = tmp_path / "times.csv"
    times.write_text("\n".join(TIME_LINES) + "\n")
    cfg = tmp_path / "grid.cfg"
    cfg.write_text("axis1.values = 50,75\n")
    code = main(
        [
            "build-utility",
            "--scans",
            str(scans),
            "--times",
            str(times),
            "--config",
            str(cfg),
            "--out-dir",
            str(tmp_path / "built"),
        ]
    )
    assert code == 1
    assert "machine 1 condition 1: no y scan" in capsys.readouterr().err
