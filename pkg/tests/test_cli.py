import csv
import json

import pytest

from mixedfem.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, load_config, main, parse_refine
from mixedfem.errors import ConfigError


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_run_writes_history(tmp_path):
    out = tmp_path / "run"
    code = main(["run", "--benchmark", "cook", "--element", "Q4", "--refine", "2", "--increments", "5",
                 "--out", str(out)])
    assert code == EXIT_OK
    rows = read_csv(out / "history.csv")
    assert rows[0] == ["step", "load_factor", "control_disp", "reaction", "qoi_disp", "global_iters"]
    assert len(rows) == 6
    assert float(rows[-1][1]) == 1.0
    assert rows[1][2] == f"{float(rows[1][2]):.11e}"
    fields = read_csv(out / "fields.csv")
    assert fields[0][:2] == ["element", "site"] and len(fields) == 1 + 4 * 4
    meta = json.loads((out / "manifest.json").read_text())
    assert meta["status"] == "completed"


def test_rerun_is_byte_identical(tmp_path):
    args = ["run", "--benchmark", "plate", "--element", "CM-Q4", "--refine", "2x4", "--increments", "4"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("history.csv", "fields.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("benchmark = cook\nelement = HR-Q4\nrefine = 2\nincrements = 3\nisotropic_hardening = 0.3\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--increments", "4", "--out", str(out)]) == EXIT_OK
    assert len(read_csv(out / "history.csv")) == 5
    meta = json.loads((out / "manifest.json").read_text())
    assert "0.3" in json.dumps(meta)


@pytest.mark.parametrize("args", [
    ["run", "--benchmark", "cook", "--element", "Q9", "--refine", "2"],
    ["run", "--benchmark", "cook", "--element", "Q4"],
    ["run", "--benchmark", "cook", "--element", "Q4", "--refine", "2", "--bogus", "1"],
    ["run", "--benchmark", "cook", "--element", "Q4", "--refine", "2x2"],
    ["run", "--benchmark", "cook", "--element", "Q4", "--refine", "two"],
    ["converge", "--benchmark", "cook", "--element", "Q4", "--refine-list", ","],
])
def test_config_errors(tmp_path, args):
    assert main(args + ["--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[solver]\nx = 1\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_solver_failure_exit_code(tmp_path):
    cfg = tmp_path / "fail.ini"
    cfg.write_text("benchmark = cook\nelement = Q4\nrefine = 2\nincrements = 1\nmax_global_iter = 1\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == EXIT_SOLVER
    assert json.loads((out / "manifest.json").read_text())["status"] == "failed"


def test_converge_table(tmp_path):
    out = tmp_path / "conv"
    code = main(["converge", "--benchmark", "cook", "--elements", "Q4,ES-Q4", "--refine-list", "1,2",
                 "--increments", "4", "--out", str(out)])
    assert code == EXIT_OK
    rows = read_csv(out / "convergence.csv")
    assert rows[0] == ["element", "refine", "size", "value", "rel_delta_to_finest"]
    assert [r[:2] for r in rows[1:]] == [["Q4", "1"], ["Q4", "2"], ["ES-Q4", "1"], ["ES-Q4", "2"]]
    assert float(rows[2][4]) == 0.0
    assert (out / "ES-Q4" / "2" / "history.csv").exists()


def test_stability_command(tmp_path):
    out = tmp_path / "stab"
    code = main(["stability", "--benchmark", "cook", "--element", "HR-Q4", "--refine-list", "1,2",
                 "--supports", "minimal", "--out", str(out)])
    assert code == EXIT_OK
    rows = read_csv(out / "stability.csv")
    assert rows[0] == ["mesh_h", "lambda_min", "rank_C", "flag"] and len(rows) == 3


def test_parse_refine():
    assert parse_refine("6x12", "plate") == (6, 12)
    assert parse_refine("6", "plate") == (6, 12)
    assert parse_refine("8", "cook") == (8,)
    with pytest.raises(ConfigError):
        parse_refine("a", "cook")


def test_load_config_sections(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[run]\nbenchmark = plate\n[material]\nyield_stress = 0.3\n")
    assert load_config(p) == {"benchmark": "plate", "material": {"yield_stress": 0.3}}
    p.write_text("[run]\nbenchmark = plate\n[material]\nfoo = 1\n")
    with pytest.raises(ConfigError):
        load_config(p)
