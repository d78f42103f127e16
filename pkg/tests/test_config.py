import pytest

from cutlocus.config import DEFAULT_TOLERANCES, close_stages, load_run_config, read_run_file
from cutlocus.geometry.schema import ConfigError, Stage


def test_defaults():
    config = load_run_config()
    assert config.scenario == "euclidean_annulus"
    assert config.rays == 128
    assert config.grid_h == 0.02
    assert config.stages == list(Stage)
    assert config.tolerances == DEFAULT_TOLERANCES


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("CUTLOCUS_RAYS", "64")
    monkeypatch.setenv("CUTLOCUS_SCENARIO", "euclidean_disk")
    monkeypatch.setenv("CUTLOCUS_A2_TOL", "1e-4")
    config = load_run_config()
    assert config.rays == 64
    assert config.scenario == "euclidean_disk"
    assert config.tolerance("a2_tol") == 1e-4


def test_environment_must_be_numeric(monkeypatch):
    monkeypatch.setenv("CUTLOCUS_GRID_H", "fine")
    with pytest.raises(ConfigError):
        load_run_config()


@pytest.mark.parametrize(
    "overrides",
    [
        {"rays": 4},
        {"grid_h": 0.0},
        {"grid_h": -0.01},
        {"tolerances": {"a2_tolerance": 1e-3}},
        {"tolerances": {"a2_tol": -1.0}},
        {"stages": ["classify"]},
        {"stages": ["rays", "hj"]},
        {"formats": ["png"]},
    ],
)
def test_invalid_run_config(overrides):
    with pytest.raises(ConfigError):
        load_run_config(**overrides)


def test_none_means_not_given():
    assert load_run_config(rays=None, grid_h=0.05).rays == 128


def test_close_stages():
    assert close_stages(["classify"]) == ["rays", "focal", "cut", "classify"]
    assert close_stages(["hj", "rays"]) == ["rays", "cut", "hj"]
    with pytest.raises(ConfigError):
        close_stages(["render"])


def test_run_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        "[run]\n"
        "scenario = disk_with_g\n"
        "rays = 96\n"
        "stages = rays, cut, hj\n"
        "formats = json\n"
        "\n"
        "[tolerances]\n"
        "consistency_factor = 6\n"
        "\n"
        "[scenario]\n"
        "amplitude = 0.1\n"
    )
    config = load_run_config(str(path), grid_h=0.05)
    assert config.scenario == "disk_with_g"
    assert config.rays == 96
    assert config.grid_h == 0.05
    assert [stage.value for stage in config.stages] == ["rays", "cut", "hj"]
    assert config.formats == ["json"]
    assert config.tolerance("consistency_factor") == 6.0
    assert config.tolerance("a2_tol") == DEFAULT_TOLERANCES["a2_tol"]
    assert config.scenario_params == {"amplitude": 0.1}


def test_run_file_stages_are_strict(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nstages = split\n")
    with pytest.raises(ConfigError):
        load_run_config(str(path))


def test_inline_run_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[scenario]\nname = tilted\ng11 = 1 + 0.2 * x * x\ng12 = 0\ng22 = 1\n")
    values = read_run_file(str(path))
    assert values["scenario"] == "tilted"
    assert values["inline"]["g11"] == "1 + 0.2 * x * x"
    assert "scenario_params" not in values


def test_missing_run_file(tmp_path):
    with pytest.raises(ConfigError):
        read_run_file(str(tmp_path / "missing.ini"))
