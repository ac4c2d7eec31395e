import csv

import pytest

from svpl.cli import DIAG_COLUMNS, EXIT_CONFIG, EXIT_NUMERIC, main
from svpl.evaluation import REPORT_COLUMNS


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["--seed", "7", "simulate", "--n", "900", "--out", str(d / "data.csv")]) == 0
    return d


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_files(data):
    rows = _read(data / "data.csv")
    assert rows[0] == ["x1", "x2", "x3", "x4", "a", "y"]
    assert len(rows) == 901
    arms = {int(r[4]) for r in rows[1:]}
    assert arms <= {1, 2, 3, 4, 5}
    orc = _read(data / "data.oracle.csv")
    assert orc[0] == ["row"] + [f"pi_{k}" for k in range(1, 6)] + [f"y{k}" for k in range(1, 6)]
    for r in orc[1:50]:
        flags = [int(v) for v in r[1:6]]
        assert flags in ([1, 1, 0, 0, 0], [0, 0, 1, 1, 0])


def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["--seed", "3", "simulate", "--n", "50", "--out", str(a)])
    main(["--seed", "3", "simulate", "--n", "50", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_run_glb_and_evaluate(data, tmp_path):
    out = tmp_path / "glb.csv"
    assert main(["run-glb", "--data", str(data / "data.csv"), "--out", str(out),
                 "--learner", "ols", "--alpha", "0.1"]) == 0
    rows = _read(out)
    assert rows[0] == ["row", "in_1", "in_2", "in_3", "in_4", "in_5", "cardinality"]
    assert all(int(r[6]) == sum(int(v) for v in r[1:6]) for r in rows[1:])
    rep = tmp_path / "rep.csv"
    assert main(["evaluate", "--sets", str(out), "--data", str(data / "data.csv"),
                 "--report", str(rep), "--method", "glb", "--alpha", "0.1"]) == 0
    rr = _read(rep)
    assert tuple(rr[0]) == REPORT_COLUMNS
    assert 0 <= float(rr[1][3]) <= 1


def test_run_conformal_diagnostics(data, tmp_path):
    out = tmp_path / "conf.csv"
    assert main(["run-conformal", "--data", str(data / "data.csv"), "--out", str(out), "--alpha", "0.1",
                 "--r", "0.2", "--score-learner", "ols", "--rbar-reps", "5"]) == 0
    diag = _read(tmp_path / "conf.diag.csv")
    assert tuple(diag[0]) == DIAG_COLUMNS
    assert float(diag[1][0]) == 0.1 and float(diag[1][1]) == 0.2
    assert diag[1][4] in ("0", "1")


def test_run_conformal_alpha_zero_full(data, tmp_path):
    out = tmp_path / "full.csv"
    main(["run-conformal", "--data", str(data / "data.csv"), "--out", str(out), "--alpha", "0",
          "--score-learner", "ols", "--rbar-reps", "3"])
    rows = _read(out)
    assert all(r[6] == "5" for r in rows[1:])


def test_table1_command(tmp_path):
    code = main(["--out-dir", str(tmp_path), "table1", "--reps", "1", "--n", "600", "--k", "10",
                 "--B", "50", "--test-size", "100", "--methods", "ocp,conformal"])
    assert code == 0
    rows = _read(tmp_path / "table1.csv")
    assert [r[0] for r in rows[1:]] == ["ocp", "conformal", "conformal", "conformal"]


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("reps: 5\ntest_size: 100\ntable1_n: 600\nmethods: [ocp]\nlearners:\n  k: 10\n  B: 50\n")
    code = main(["--config", str(cfg), "--out-dir", str(tmp_path), "table1", "--reps", "1"])
    assert code == 0
    rows = _read(tmp_path / "table1.csv")
    assert rows[1][3] == "1"


def test_exit_codes(data, tmp_path):
    assert main(["run-glb", "--data", str(data / "data.csv"), "--out", str(tmp_path / "x.csv"),
                 "--alpha", "0"]) == EXIT_CONFIG
    assert main(["evaluate", "--sets", str(tmp_path / "missing.csv"), "--data", str(data / "data.csv"),
                 "--report", str(tmp_path / "r.csv")]) == EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense_key: 1\n")
    assert main(["--config", str(bad), "table1"]) == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_numerical_failure_exit(tmp_path, monkeypatch):
    import svpl.cli as cli
    from svpl.conformal import DegenerateDenominator

    def boom(*a, **k):
        raise DegenerateDenominator("flat")
    monkeypatch.setattr(cli, "run_rbar", boom)
    assert main(["--out-dir", str(tmp_path), "rbar", "--reps", "1"]) == EXIT_NUMERIC


def test_plot_written(tmp_path):
    code = main(["--out-dir", str(tmp_path), "sweep", "--reps", "1", "--n", "600", "--k", "10",
                 "--B", "50", "--test-size", "100", "--alpha", "0.1,0.5", "--r", "0,0.5",
                 "--methods", "conformal", "--plot"])
    assert code == 0
    assert (tmp_path / "sweep.png").stat().st_size > 0
