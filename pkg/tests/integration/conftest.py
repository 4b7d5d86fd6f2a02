import pytest

from app.core.experiment import experiment_params
from app.core.schemas import ClusterSpec, ScenarioConfig, SupportModelConfig, TrackerParams


@pytest.fixture
def desk_scenario() -> ScenarioConfig:
    """
    Scaled-down two-change scenario: n = 64, r0 = 8 in two clusters of variance
    ratio 100, two changes each adding and deleting two directions.
    """
    return ScenarioConfig(
        n=64,
        t_max=2400,
        t_train=200,
        change_times=[500, 1400],
        r0=8,
        r_new=[2],
        r_old=[2],
        b=0.1,
        clusters=[ClusterSpec(size=4, half_range=10.0), ClusterSpec(size=4, half_range=1.0)],
        gamma_new=1.0,
        d=0,
        support=SupportModelConfig(s=6, step=3, beta=10),
        x_min=60.0,
        seed=0,
    )


@pytest.fixture
def desk_params(desk_scenario: ScenarioConfig) -> TrackerParams:
    xi, omega = experiment_params(desk_scenario)
    # sampling spread within one block can split a cluster in several
    return TrackerParams(r0=8, alpha=50, K=8, vartheta_max=8, xi=xi, omega=omega)


@pytest.fixture
def three_scale_scenario() -> ScenarioConfig:
    """
    One change into three coefficient scales 100 : 10 : 1, so every pair of
    neighbouring clusters has variance ratio 100. The change deletes two of the
    smallest-scale directions and adds two at that scale.
    """
    return ScenarioConfig(
        n=64,
        t_max=1800,
        t_train=200,
        change_times=[500],
        r0=7,
        r_new=[2],
        r_old=[2],
        b=0.1,
        clusters=[
            ClusterSpec(size=2, half_range=100.0),
            ClusterSpec(size=2, half_range=10.0),
            ClusterSpec(size=3, half_range=1.0),
        ],
        gamma_new=1.0,
        d=0,
        support=SupportModelConfig(s=6, step=3, beta=10),
        x_min=60.0,
        seed=0,
    )


@pytest.fixture
def three_scale_params(three_scale_scenario: ScenarioConfig) -> TrackerParams:
    xi, omega = experiment_params(three_scale_scenario)
    return TrackerParams(r0=7, alpha=100, K=6, vartheta_max=5, xi=xi, omega=omega)
