import json
import subprocess
import sys

import pytest

from firstint.cli import load_scenario, read_trajectory, run
from firstint.errors import ValidationError
from firstint.flow import conservation_report


def write(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture
def kepler_w(tmp_path):
    return write(tmp_path, {"builtin": "kepler-w", "integrator": {"t_end": 10, "rtol": 1e-10, "atol": 1e-12}})


class TestIntegrate:
    def test_artifacts(self, tmp_path, kepler_w, capsys):
        out, rep = tmp_path / "traj.csv", tmp_path / "report.json"
        assert run(["integrate", kepler_w, "--out", str(out), "--report", str(rep)]) == 0
        report = json.loads(rep.read_text())
        assert list(report) == ["termination", "steps", "rejected", "integrals"]
        assert report["termination"] == "completed"
        assert max(d["max_rel_drift"] for d in report["integrals"]) <= 1e-7
        lines = out.read_text().split("\n")
        assert lines[0] == "t,x1,x2,x3,y1,y2,y3,f1,f2,f3"
        assert lines[-1] == "" and "\r" not in out.read_text()
        assert len(lines) - 2 == report["steps"] + 1
        assert json.loads(capsys.readouterr().out) == report

    def test_round_trip_is_bit_identical(self, tmp_path, kepler_w):
        out, rep = tmp_path / "traj.csv", tmp_path / "report.json"
        assert run(["integrate", kepler_w, "--out", str(out), "--report", str(rep)]) == 0
        report = json.loads(rep.read_text())
        traj = read_trajectory(str(out), [d["name"] for d in report["integrals"]])
        again = conservation_report(traj, report["steps"], report["rejected"], report["termination"]).as_dict()
        assert again == report

    def test_early_stop_writes_nothing(self, tmp_path):
        path = write(tmp_path, {"builtin": "example1", "initial": [-1, 0, 1, 0, 0.3, -0.3]})
        out, rep = tmp_path / "traj.csv", tmp_path / "report.json"
        assert run(["integrate", path, "--out", str(out), "--report", str(rep)]) == 3
        assert sorted(p.name for p in tmp_path.iterdir()) == ["scenario.json"]

    def test_drift_limit(self, tmp_path, kepler_w):
        out = tmp_path / "traj.csv"
        assert run(["integrate", kepler_w, "--out", str(out), "--t-end", "1", "--max-drift", "1e-300"]) == 4
        assert not out.exists()

    def test_overrides(self, tmp_path, kepler_w, capsys):
        assert run(["integrate", kepler_w, "--method", "rk4-fixed", "--dt", "0.1", "--t-end", "1"]) == 0
        assert json.loads(capsys.readouterr().out)["steps"] == 10


class TestPointCommands:
    def test_field_case_two(self, tmp_path, capsys):
        path = write(tmp_path, {"builtin": "kepler-m"})
        assert run(["field", path, "--point", "1,0.2,-0.3,0.4,1,0.1"]) == 0
        sample = json.loads(capsys.readouterr().out)
        assert sample["case"] == "CaseII"
        assert sample["velocity"][:3] == [0.4, 1.0, 0.1]

    def test_field_backend(self, tmp_path, capsys):
        path = write(tmp_path, {"builtin": "kepler-w"})
        assert run(["field", path, "--point", "1,0.2,-0.3,0.4,1,0.1", "--backend", "cramer"]) == 0
        assert json.loads(capsys.readouterr().out)["backend"] == "cramer"

    def test_field_on_singular_locus(self, tmp_path, capsys):
        path = write(tmp_path, {"builtin": "kepler-w"})
        assert run(["field", path, "--point", "1,0,0,0,1,0"]) == 3
        assert "dependent" in capsys.readouterr().err

    def test_dependent_mode_from_file(self, tmp_path, capsys):
        path = write(tmp_path, {"builtin": "kepler-w", "dependent": "lstsq"})
        assert run(["field", path, "--point", "1,0,0,0,1,0"]) == 0
        assert json.loads(capsys.readouterr().out)["case"] == "Dependent"

    def test_brackets(self, tmp_path, capsys):
        path = write(tmp_path, {"builtin": "kepler-m"})
        assert run(["brackets", path, "--point", "1,0.2,-0.3,0.4,1,0.1"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["s0"] == 0.0
        assert out["sN"] == pytest.approx(-0.92)
        assert len(out["poisson"]) == 3

    def test_bad_point(self, tmp_path, capsys):
        path = write(tmp_path, {"builtin": "kepler-m"})
        assert run(["field", path, "--point", "1,2"]) == 2
        assert run(["field", path, "--point", "1,2,a,4,5,6"]) == 2


class TestCheck:
    def test_passes(self, tmp_path, capsys):
        path = write(tmp_path, {"builtin": "uhlenbeck", "builtin_params": {"B": 0}, "lambda": "sin(x1)"})
        assert run(["check", path, "--samples", "5", "--seed", "3"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["rank"] == 3 and out["case"] == "CaseII"
        assert [s["sample"] for s in out["samples"]] == list(range(6))

    def test_seeded(self, tmp_path, capsys):
        path = write(tmp_path, {"builtin": "example1"})
        run(["check", path, "--samples", "4", "--seed", "7"])
        first = capsys.readouterr().out
        run(["check", path, "--samples", "4", "--seed", "7"])
        assert capsys.readouterr().out == first

    def test_duplicate_integral(self, tmp_path, capsys):
        doc = {"n": 2, "integrals": ["x1*y1 + y2", "x1*y1 + y2"], "hamiltonian": "y1^2", "initial": [1, 2, 3, 4]}
        assert run(["check", write(tmp_path, doc)]) == 2
        assert "rank deficient" in capsys.readouterr().err

    def test_explicit_file(self, tmp_path, capsys):
        doc = {
            "n": 1,
            "params": {"k": 2.0},
            "integrals": ["x1^2 + k*y1^2"],
            "hamiltonian": "x1*y1",
            "initial": [0.5, 1.0],
        }
        assert run(["check", write(tmp_path, doc), "--samples", "3"]) == 0
        assert json.loads(capsys.readouterr().out)["case"] == "CaseI"


class TestErrors:
    def test_parse_error_has_position(self, tmp_path, capsys):
        doc = {"n": 1, "integrals": ["x1 * (y1 + 2"], "hamiltonian": "x1", "initial": [1, 2]}
        assert run(["check", write(tmp_path, doc)]) == 2
        assert "position 12" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "doc",
        [
            {"builtin": "kepler-m", "integrals": ["x1"]},
            {"n": 1, "hamiltonian": "x1", "initial": [1, 2]},
            {"n": 2, "integrals": ["x1"], "hamiltonian": "x1", "initial": [1, 2, 3, 4]},
            {"n": 1, "integrals": ["x1*y1"], "hamiltonian": "x1", "initial": [1]},
            {"n": 1, "integrals": ["x1*y1"], "hamiltonian": "z", "initial": [1, 2]},
            {"builtin": "kepler-m", "backend": "fast"},
            {"builtin": "kepler-m", "integrator": {"method": "euler"}},
            {"builtin": "kepler-m", "integrator": {"steps": 3}},
            {"builtin": "kepler-m", "color": "red"},
            {"builtin": "nope"},
            {"builtin": "uhlenbeck", "builtin_params": {"a": [1, 1, 1]}},
            [1, 2],
        ],
    )
    def test_invalid_documents(self, doc):
        with pytest.raises(ValidationError):
            load_scenario(doc)

    def test_invalid_json(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert run(["check", str(path)]) == 2
        assert run(["check", str(tmp_path / "missing.json")]) == 2

    def test_usage(self, capsys):
        assert run([]) == 1
        assert run(["bogus"]) == 1
        assert run(["field", "x.json"]) == 1
        assert run(["scenario"]) == 1


class TestRegistryCommands:
    def test_scenarios(self, capsys):
        assert run(["scenarios"]) == 0
        names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
        assert names == ["example1", "kepler-m", "kepler-w", "vortex3", "uhlenbeck"]

    def test_show(self, capsys):
        assert run(["scenario", "show", "kepler-w"]) == 0
        assert json.loads(capsys.readouterr().out)["params"][0]["name"] == "mu"
        assert run(["scenario", "show", "nope"]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "firstint", "scenarios"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "kepler-w" in proc.stdout
