import pytest

from app.core.experiment import experiment_params
from app.core.schemas import ClusterSpec, ScenarioConfig, SupportModelConfig, TrackerParams


@pytest.fixture
def small_scenario() -> ScenarioConfig:
    """One change of one direction in dimension 24, short enough for unit tests."""
    return ScenarioConfig(
        n=24,
        t_max=300,
        t_train=60,
        change_times=[120],
        r0=3,
        r_new=[1],
        r_old=[0],
        clusters=[ClusterSpec(size=3, half_range=1.0)],
        gamma_new=1.0,
        d=0,
        support=SupportModelConfig(s=3, step=1, beta=5),
        x_min=50.0,
        seed=1,
    )


@pytest.fixture
def small_params(small_scenario: ScenarioConfig) -> TrackerParams:
    xi, omega = experiment_params(small_scenario)
    return TrackerParams(r0=3, alpha=20, K=2, xi=xi, omega=omega)
