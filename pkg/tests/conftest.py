import pytest

from cutlocus.config import get_settings, load_run_config
from cutlocus.models import ScenarioRun
from cutlocus.scenarios import euclidean_annulus, euclidean_disk, euclidean_ellipse


@pytest.fixture(autouse=True)
def fresh_settings():
    """Settings are cached; tests that set CUTLOCUS_* variables need a fresh copy."""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def disk():
    return euclidean_disk()


@pytest.fixture
def annulus():
    return euclidean_annulus()


@pytest.fixture
def ellipse():
    return euclidean_ellipse()


@pytest.fixture
def make_run(tmp_path):
    """Coarse ScenarioRun factory; every product lands in tmp_path."""

    def _make_run(scenario: str, rays: int = 48, grid_h: float = 0.04, **params) -> ScenarioRun:
        config = load_run_config(scenario=scenario, rays=rays, grid_h=grid_h, out=str(tmp_path), scenario_params=params)
        return ScenarioRun.from_config(config)

    return _make_run
