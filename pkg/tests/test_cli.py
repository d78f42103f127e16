import json
import os

from cutlocus.cli import main
from cutlocus.scenarios import SCENARIOS
from cutlocus.utils import load_json_file


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == len(SCENARIOS)
    assert lines[0].startswith("euclidean_disk (n=2")


def test_export_truths(tmp_path, capsys):
    assert main(["export-truths", "-o", str(tmp_path)]) == 0
    path = capsys.readouterr().out.strip()
    assert path == os.path.join(str(tmp_path), "truths.json")
    truths = load_json_file(path)
    assert sorted(truths) == sorted(SCENARIOS)
    assert truths["euclidean_annulus"]["truths"]["all_cleave"] is True


def test_validate(capsys):
    assert main(["validate", "-s", "euclidean_disk", "--grid-h", "0.05"]) == 0
    diagnostics = json.loads(capsys.readouterr().out)
    assert diagnostics["ok"] is True
    assert diagnostics["compatibility"]["passed"] is True


def test_validate_bad_grid():
    assert main(["validate", "-s", "euclidean_disk", "--grid-h", "-1"]) == 2


def test_unknown_stage(tmp_path):
    assert main(["run", "-s", "euclidean_disk", "-o", str(tmp_path), "--stages", "render"]) == 2


def test_missing_run_file(tmp_path):
    assert main(["run", "-c", str(tmp_path / "missing.ini")]) == 2


def test_run_rays_stage(tmp_path):
    args = ["run", "-s", "euclidean_disk", "-o", str(tmp_path), "--rays", "16", "--grid-h", "0.05", "--stages", "rays"]
    assert main(args) == 0
    summary = load_json_file(os.path.join(str(tmp_path), "summary.json"))
    assert summary["status"] == 0
    assert list(summary["stages"]) == ["rays"]
    assert summary["stages"]["rays"]["count"] == 16
    assert summary["config"]["stages"] == ["rays"]
    assert summary["violations"] == []
    assert os.path.exists(os.path.join(str(tmp_path), "rays.csv"))


def test_run_file_stages_are_not_closed(tmp_path):
    run_file = tmp_path / "run.ini"
    run_file.write_text(f"[run]\nscenario = euclidean_disk\nout = {tmp_path}\nstages = cut\n")
    # cut needs rays; only --stages adds prerequisites
    assert main(["run", "-c", str(run_file)]) == 2
