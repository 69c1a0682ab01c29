import json
import math

import pytest

from causalscore.cli import main
from causalscore.reporting import read_trials_csv, spearman, summary_table


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert _run("gen", "--dgp", "rct", "--n", 1200, "--seed", 1, "--out", out) == 0
    return out


def _search(data_dir, out, *extra):
    return _run(
        "search", "--data", data_dir / "data.csv", "--truth", data_dir / "truth.csv",
        "--problem-kind", "rct_cate", "--objective", "qini", "--max-trials", 7, "--seed", 3,
        "--out", out, *extra,
    )


def test_gen_writes_files(generated):
    manifest = json.loads((generated / "manifest.json").read_text())
    assert manifest["seed"] == 1
    assert manifest["problem_kind"] == "rct_cate"
    assert (generated / "data.csv").read_text().startswith("# seed=1 config_hash=")


def test_gen_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert _run("gen", "--dgp", "iv", "--n", 500, "--seed", 9, "--out", tmp_path / d) == 0
    for name in ("data.csv", "truth.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_search_is_byte_identical_across_runs_and_workers(generated, tmp_path):
    assert _search(generated, tmp_path / "w1") == 0
    assert _search(generated, tmp_path / "w1b") == 0
    assert _search(generated, tmp_path / "w4", "--workers", 4) == 0
    ref = (tmp_path / "w1" / "trials.csv").read_bytes()
    h = json.loads((tmp_path / "w1" / "report.json").read_text())["payload_sha256"]
    for d in ("w1b", "w4"):
        assert (tmp_path / d / "trials.csv").read_bytes() == ref
        assert json.loads((tmp_path / d / "report.json").read_text())["payload_sha256"] == h


def test_score_reproduces_report_test_scores(generated, tmp_path):
    assert _search(generated, tmp_path / "s") == 0
    report = json.loads((tmp_path / "s" / "report.json").read_text())
    assert _run(
        "score", "--data", generated / "data.csv", "--truth", generated / "truth.csv",
        "--report", tmp_path / "s" / "report.json", "--out", tmp_path / "sc",
    ) == 0
    scored = json.loads((tmp_path / "sc" / "scores.json").read_text())
    best = next(t for t in report["trials"] if t["trial_id"] == report["best_trial_id"])
    from_report = {(s["name"], s["split"]): s["value"] for s in best["scores"] if s["split"] == "test"}
    from_score = {(s["name"], s["split"]): s["value"] for s in scored["scores"]}
    assert from_report
    for key, value in from_report.items():
        assert from_score[key] == pytest.approx(value, rel=1e-12, abs=1e-12)


def test_score_impact_file(generated, tmp_path):
    truth_rows = read_trials_csv(generated / "truth.csv")
    impact = tmp_path / "impact.csv"
    impact.write_text("impact\n" + "\n".join(r["tau"] for r in truth_rows) + "\n")
    assert _run(
        "score", "--data", generated / "data.csv", "--truth", generated / "truth.csv",
        "--impact", impact, "--problem-kind", "rct_cate", "--out", tmp_path / "o",
    ) == 0
    scored = json.loads((tmp_path / "o" / "scores.json").read_text())
    mse = [s for s in scored["scores"] if s["name"] == "mse_tau"]
    assert mse and all(s["value"] == 0.0 for s in mse)


def test_report_outputs(generated, tmp_path):
    assert _search(generated, tmp_path / "s") == 0
    assert _run("report", "--trials", tmp_path / "s" / "trials.csv", "--out", tmp_path / "r") == 0
    md = (tmp_path / "r" / "summary.md").read_text()
    assert "seeds=3" in md and "spearman" in md
    header = (tmp_path / "r" / "plot_data.csv").read_text().splitlines()[0]
    assert header == "run_id,trial_id,family,objective,split,score_name,score,mse_tau"


def test_spearman_hand_computed():
    # ranks of y: [1, 2, 3.5, 5, 3.5]; rho = 8 / sqrt(10 * 9.5)
    x = [1.0, 2.0, 3.0, 4.0, 5.0]
    y = [5.0, 6.0, 7.0, 8.0, 7.0]
    assert spearman(x, y) == pytest.approx(8 / math.sqrt(95), abs=1e-12)
    rows = [
        {"run_id": "r", "trial_id": i, "family": "f", "objective": "qini", "split": "valid",
         "score_name": "qini", "score": -a, "mse_tau": b}
        for i, (a, b) in enumerate(zip(x, y))
    ]
    (entry,) = summary_table(rows)
    assert entry["spearman"] == pytest.approx(-8 / math.sqrt(95), abs=1e-12)
    assert entry["spearman_oriented"] == pytest.approx(8 / math.sqrt(95), abs=1e-12)
    assert entry["best_trial_id"] == 0


def test_exit_code_config_error(generated, tmp_path, capsys):
    code = _run(
        "search", "--data", generated / "data.csv", "--problem-kind", "rct_cate",
        "--objective", "mse_tau", "--max-trials", 3, "--out", tmp_path / "x",
    )
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "InvalidObjective"


def test_exit_code_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,T,Y\n1,0,1\n2,3,1\n3,1,0\n")
    code = _run(
        "search", "--data", bad, "--problem-kind", "rct_cate", "--objective", "qini",
        "--max-trials", 3, "--out", tmp_path / "x",
    )
    assert code == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "NonBinaryTreatment"


def test_exit_code_all_trials_failed(tmp_path):
    rows = ["x,T,Y,Z"] + [f"{i},{i % 2},{i * 0.5},1" for i in range(40)]
    data = tmp_path / "d.csv"
    data.write_text("\n".join(rows) + "\n")
    code = _run(
        "search", "--data", data, "--problem-kind", "iv", "--objective", "energy_iv",
        "--max-trials", 4, "--out", tmp_path / "x",
    )
    assert code == 4
    err = json.loads((tmp_path / "x" / "error.json").read_text())
    assert err["error"] == "AllTrialsFailed"
