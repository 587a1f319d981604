import json

import numpy as np
import pytest

from refutable.cli import EXIT_CONFIG, EXIT_DATA, EXIT_INFEASIBLE, EXIT_OK, ingest_late_csv, load_result, main
from refutable.exceptions import DataError
from refutable.pipeline import RobustResult


def write(path, text, newline="\n"):
    path.write_bytes(text.replace("\n", newline).encode())
    return str(path)


def run_cli(args, capsys):
    code = main(args)
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


class TestIngest:
    def test_three_rows(self, tmp_path):
        path = write(tmp_path / "a.csv", "y,d,z\n1.5,1,0\n-2,0,1\n3e-1,1,1\n")
        assert ingest_late_csv(path) == [(1.5, 1, 0), (-2.0, 0, 1), (0.3, 1, 1)]

    def test_crlf_and_column_order(self, tmp_path):
        path = write(tmp_path / "a.csv", "z,y,d\n0,1.5,1\n1,2.5,0\n", newline="\r\n")
        assert ingest_late_csv(path) == [(1.5, 1, 0), (2.5, 0, 1)]

    def test_non_binary_names_line(self, tmp_path):
        path = write(tmp_path / "a.csv", "y,d,z\n1,1,0\n2,0,1\n3,1,1\n4,2,0\n")
        with pytest.raises(DataError, match="line 5") as info:
            ingest_late_csv(path)
        assert info.value.line == 5 and info.value.code == "non_binary"

    @pytest.mark.parametrize(
        "text,code",
        [("y,d\n1,0\n", "missing_columns"), ("y,d,z\nabc,1,0\n", "malformed"), ("y,d,z\n1,1\n", "malformed"),
         ("y,d,z\ninf,1,0\n", "malformed"), ("", "missing_columns")],
    )
    def test_error_codes(self, tmp_path, text, code):
        with pytest.raises(DataError) as info:
            ingest_late_csv(write(tmp_path / "a.csv", text))
        assert info.value.code == code

    def test_unreadable(self, tmp_path):
        with pytest.raises(DataError) as info:
            ingest_late_csv(str(tmp_path / "missing.csv"))
        assert info.value.code == "unreadable"


@pytest.fixture
def zero_defier_csv(tmp_path, capsys):
    path = str(tmp_path / "sim.csv")
    code, doc = run_cli(["simulate", "--n", "600", "--defier-share", "0", "--seed", "2", "--out", path], capsys)
    assert code == EXIT_OK and doc["result"]["rows"] == 600
    return path


LATE_FAST = ["--draws", "20", "--burn-in", "30", "--thinning", "1", "--truncation-level", "10", "--grid-k", "64"]


class TestLate:
    def test_point_mass_run(self, zero_defier_csv, tmp_path, capsys):
        out = tmp_path / "r.json"
        code, _ = run_cli(["late", "--data", zero_defier_csv, "--prior", "point_mass_at_min", "--out", str(out),
                           "--plot-dir", str(tmp_path / "plots"), *LATE_FAST], capsys)
        assert code == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["schema"] == "refutable.cli-result/1" and doc["config"]["draws"] == 20
        res = doc["result"]
        assert res["theta_upper_star"] - res["theta_lower_star"] < 0.5
        assert isinstance(load_result(str(out)), RobustResult)
        lines = (tmp_path / "plots" / "trace_lower.txt").read_text().splitlines()
        assert len(lines) == len(res["traces"]["lower"])
        idx, val = lines[0].split()
        assert int(idx) == res["traces"]["draw"][0] and float(val) == res["traces"]["lower"][0]

    def test_byte_identical_modulo_timestamp(self, zero_defier_csv, tmp_path, capsys):
        texts = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            assert main(["late", "--data", zero_defier_csv, "--seed", "4", "--out", str(out), *LATE_FAST]) == 0
            doc = json.loads(out.read_text())
            doc.pop("created")
            doc["config"].pop("out")
            texts.append(json.dumps(doc, sort_keys=True))
        assert texts[0] == texts[1]

    def test_config_file_and_flag_precedence(self, zero_defier_csv, tmp_path, capsys):
        ini = write(tmp_path / "c.ini", f"[common]\nseed = 9\n[late]\ndata = {zero_defier_csv}\ndraws = 7\n"
                                        "burn_in = 5\nthinning = 1\ntruncation_level = 10\ngrid_k = 32\n")
        code, doc = run_cli(["late", "--config", ini, "--draws", "4"], capsys)
        assert code == EXIT_OK
        assert doc["config"]["seed"] == 9 and doc["config"]["draws"] == 4
        assert doc["result"]["diagnostics"]["draws_requested"] == 4

    @pytest.mark.parametrize("flag,value", [("--draws", "0"), ("--alpha", "1.2"), ("--grid-k", "8"),
                                            ("--prior", "flat")])
    def test_config_errors(self, zero_defier_csv, capsys, flag, value):
        code, doc = run_cli(["late", "--data", zero_defier_csv, flag, value], capsys)
        assert code == EXIT_CONFIG and doc["error"]["exit_code"] == EXIT_CONFIG

    def test_unknown_config_key(self, tmp_path, capsys):
        ini = write(tmp_path / "c.ini", "[late]\nbogus = 1\n")
        code, doc = run_cli(["late", "--config", ini], capsys)
        assert code == EXIT_CONFIG and "bogus" in doc["error"]["message"]

    def test_data_error_document(self, tmp_path, capsys):
        bad = write(tmp_path / "bad.csv", "y,d,z\n1,1,0\n2,0,1\n3,1,1\n4,2,0\n")
        code, doc = run_cli(["late", "--data", bad], capsys)
        assert code == EXIT_DATA
        assert doc["error"]["line"] == 5 and doc["error"]["code"] == "non_binary" and doc["error"]["module"] == "cli"


class TestOtherSubcommands:
    def test_intersection_inline(self, tmp_path, capsys):
        ini = write(tmp_path / "c.ini", "[intersection]\nz_grid = 0,1,2\nmean_lower = 0.1,0.6,0.3\n"
                                        "mean_upper = 0.4,0.9,0.8\nm = 0.2,0.3\n")
        code, doc = run_cli(["intersection", "--config", ini], capsys)
        assert code == EXIT_OK
        assert doc["result"]["min_deviation"] == pytest.approx(0.2)
        b = doc["result"]["bounds"]
        assert b[0]["lower"] == pytest.approx(0.4) and b[0]["upper"] == pytest.approx(0.6)
        assert b[1]["lower"] == pytest.approx(0.3) and b[1]["upper"] == pytest.approx(0.7)

    def test_intersection_infeasible(self, capsys):
        code, doc = run_cli(["intersection", "--z-grid", "0,1", "--mean-lower", "0.1,0.6", "--mean-upper", "0.4,0.9",
                             "--m", "0"], capsys)
        assert code == EXIT_INFEASIBLE and doc["error"]["module"] == "intersection"

    def test_choice(self, capsys):
        code, doc = run_cli(["choice", "--J", "2", "--P", "0.3,0.25,0.45", "--u", "0.3,-0.2",
                             "--expectation", "analytic", "--m", "0.05", "--box=-2,2,-2,2"], capsys)
        assert code == EXIT_OK
        di = doc["result"]["divergence_interval"]
        assert di["delta_upper"] == "inf" and di["delta_lower"] > 0
        ub = doc["result"]["utility_bounds"]
        assert ub["lower"] < ub["upper"]

    def test_miv(self, capsys):
        code, doc = run_cli(["miv", "--z-grid", "0,1,2,3", "--h-lower", "0.5,0.2,0.3,0.1", "--h-upper", "1,1,1,0.5",
                             "--z0-index", "2", "--delta-m", "0.1"], capsys)
        assert code == EXIT_OK
        assert doc["result"]["bounds"][0]["upper"] == pytest.approx(0.6, abs=1e-9)

    def test_simulate_needs_out(self, capsys):
        code, _ = run_cli(["simulate"], capsys)
        assert code == EXIT_CONFIG

    def test_simulate_defiers(self, tmp_path, capsys):
        path = str(tmp_path / "s.csv")
        code, doc = run_cli(["simulate", "--n", "3000", "--defier-share", "0.2", "--out", path], capsys)
        assert code == EXIT_OK and doc["result"]["type_probs"][3] == 0.2
        X = np.asarray(ingest_late_csv(path))
        assert X.shape == (3000, 3)
