import csv
import json

import numpy as np
import pytest

from pricemfg.cli import (EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_OK, ConfigError, RunConfig,
                          main, run_checks)
from pricemfg.grid import cell_weights
from pricemfg.solver import transport_forward

COARSE = ["--rho", "0.05", "--h", "0.1"]


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_config_defaults_per_test():
    c1 = RunConfig.from_dict({"test": "test1"})
    c2 = RunConfig.from_dict({"test": "test2"})
    assert (c1.family, c1.eps, c1.tau) == ("quadratic", 0.004, 0.25)
    assert (c2.family, c2.eps, c2.tau) == ("quartic", 2e-4, 0.0)


@pytest.mark.parametrize("bad", [{"max_iterations": 0}, {"rho": -1.0}, {"domain": [1, 0]},
                                 {"test": "test9"}, {"colour": "red"}, {"emit": ["plots"]}])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_cli_rejects_zero_iterations(tmp_path, capsys):
    assert main(["solve", "--max-iterations", "0", "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert "max_iterations" in capsys.readouterr().err


def test_cli_rejects_incompatible_grid(tmp_path):
    assert main(["solve", "--rho", "0.3", "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_cli_missing_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_solve_outputs_and_determinism(tmp_path):
    out1 = tmp_path / "a"
    names = ["price.csv", "u_t0.csv", "m_tT.csv", "errors.csv", "field_u.csv", "field_m.csv",
             "summary.json"]
    snapshots = []
    for _ in range(2):
        assert main(["solve", "--test", "test2", *COARSE, "--out-dir", str(out1)]) == EXIT_OK
        snapshots.append({n: (out1 / n).read_bytes() for n in names})
    assert snapshots[0] == snapshots[1]
    assert read_csv(out1 / "price.csv")[0] == ["t", "varpi", "varpi_exact", "abs_err"]
    assert len(read_csv(out1 / "price.csv")) == 1 + 10
    assert len(read_csv(out1 / "u_t0.csv")) == 1 + 41
    field = np.loadtxt(out1 / "field_m.csv", delimiter=",", skiprows=1)
    assert field.shape == (11, 42) and np.array_equal(field[:, 0], np.arange(11))
    summary = json.loads((out1 / "summary.json").read_text())
    assert summary["schema_version"] == 1 and summary["converged"]
    assert min(summary["err_price"], summary["err_u"], summary["err_m"]) >= 0
    assert "wall_time_seconds" in json.loads((out1 / "timing.json").read_text())


def test_csv_round_trip_precision(tmp_path):
    main(["solve", *COARSE, "--out-dir", str(tmp_path)])
    rows = read_csv(tmp_path / "price.csv")[1:]
    for row in rows:
        v, ex, err = (float(s) for s in row[1:])
        assert err == abs(v - ex)


def test_config_file_with_overrides(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"test": "test1", "rho": 0.1, "h": 0.2, "eps": 0.01}))
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--rho", "0.05", "--out-dir", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["grid"]["rho"] == pytest.approx(0.05) and summary["config"]["eps"] == 0.01


def test_nonconvergence_exit_code(tmp_path):
    code = main(["solve", *COARSE, "--eps", "1e-15", "--max-iterations", "2", "--out-dir", str(tmp_path)])
    assert code == EXIT_NOT_CONVERGED
    assert not json.loads((tmp_path / "summary.json").read_text())["converged"]


def test_sweep_rows(tmp_path):
    pairs = tmp_path / "pairs.json"
    pairs.write_text(json.dumps([[0.1, 0.2], [0.05, 0.1], [0.04, 0.125], [0.025, 0.05]]))
    assert main(["sweep", "--sweep", str(pairs), "--out-dir", str(tmp_path / "s")]) == EXIT_OK
    rows = read_csv(tmp_path / "s" / "errors.csv")
    assert rows[0] == ["rho", "h", "eps", "iterations", "err_price", "err_u", "err_m"]
    assert len(rows) == 5
    assert [float(r[0]) for r in rows[1:]] == [0.1, 0.05, 0.04, 0.025]


def test_sweep_parallel_matches_serial(tmp_path, monkeypatch):
    pairs = tmp_path / "pairs.json"
    pairs.write_text(json.dumps([[0.1, 0.2], [0.05, 0.1]]))
    main(["sweep", "--sweep", str(pairs), "--out-dir", str(tmp_path / "serial")])
    monkeypatch.setenv("MFG_THREADS", "2")
    main(["sweep", "--sweep", str(pairs), "--out-dir", str(tmp_path / "par")])
    assert (tmp_path / "serial" / "errors.csv").read_bytes() == (tmp_path / "par" / "errors.csv").read_bytes()


def test_sweep_rejects_malformed_pairs(tmp_path):
    pairs = tmp_path / "pairs.json"
    pairs.write_text(json.dumps([[0.1, 0.2, 0.3]]))
    assert main(["sweep", "--sweep", str(pairs), "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_check_passes(capsys):
    assert main(["check"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and "monotonicity-pairing" in out


def test_check_verdicts_seed_independent():
    verdicts = {tuple((r.name, r.passed) for r in run_checks(seed=s, n_pairs=20)) for s in range(10)}
    assert len(verdicts) == 1
    assert all(ok for _, ok in next(iter(verdicts)))


def test_check_catches_sign_error_in_transport():
    def broken(grid, alpha_star, m_bar, cfg=None):
        m = grid.zeros()
        m[:, 0] = m_bar
        for k in range(grid.N):
            c, w = cell_weights(grid.x + grid.h * alpha_star[:, k], grid)
            n = grid.M + 1
            # weight of the right neighbour enters with the wrong sign
            m[:, k + 1] = (np.bincount(c, weights=(1 - w) * m[:, k], minlength=n)
                           - np.bincount(c + 1, weights=w * m[:, k], minlength=n))
        return m

    results = {r.name: r.passed for r in run_checks(seed=0, n_pairs=5, transport=broken)}
    assert not results["mass-conservation"]
    intact = {r.name: r.passed for r in run_checks(seed=0, n_pairs=5, transport=transport_forward)}
    assert intact["mass-conservation"]
