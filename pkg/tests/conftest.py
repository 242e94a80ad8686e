from pathlib import Path

import numpy as np
import pytest

from crowdgame import expcli
from crowdgame.model import BlockchainParams, GameConfig, SensorParams

REPO_ROOT = Path(__file__).resolve().parent.parent
SEC4_CONFIG_PATH = REPO_ROOT / "configs" / "paper_sec4.cfg"

SEC4_BLOCKCHAIN = BlockchainParams(
    quad_coeff=0.1, lin_coeff=0.1, const_coeff=0.1, compute_coeff=3.0
)


def make_sensor(**overrides) -> SensorParams:
    """Sensor from the worked single-sensor example, with overrides."""
    params = dict(
        bandwidth=2.0,
        channel_gain=1.0,
        ap_distance=1.0,
        path_loss_exp=2.0,
        circuit_power=1.0,
        unit_rate_price=20.0,
        beacon_distance=1.0,
        max_received_power=10.0,
    )
    params.update(overrides)
    return SensorParams(**params)


def make_config(sensors, **overrides) -> GameConfig:
    params = dict(
        sensors=list(sensors),
        noise_variance=1.0,
        power_price=0.01,
        wpt_path_loss_exp=2.0,
        blockchain=SEC4_BLOCKCHAIN,
    )
    params.update(overrides)
    return GameConfig(**params)


@pytest.fixture(scope="session")
def sec4_cfg() -> GameConfig:
    return expcli.load_config(str(SEC4_CONFIG_PATH))


@pytest.fixture(scope="session")
def single_cfg() -> GameConfig:
    """One sensor with the worked-example constants (power cap binds)."""
    return make_config([make_sensor()])


@pytest.fixture(scope="session")
def single_interior_cfg() -> GameConfig:
    """One sensor with a small data price, so its optimum is interior."""
    return make_config([make_sensor(unit_rate_price=2.0)])


def random_feasible_rates(
    rng: np.random.Generator,
    cfg: GameConfig,
    n_vectors: int,
    high: float = 0.45,
    max_load: float = 0.99,
) -> list[np.ndarray]:
    """Rejection-sample rate profiles with load T below max_load."""
    from crowdgame.model import invert_rates

    out = []
    while len(out) < n_vectors:
        r = rng.uniform(0.0, high, size=cfg.n_sensors)
        try:
            _, inv = invert_rates(r, cfg)
        except Exception:
            continue
        if inv.load < max_load:
            out.append(r)
    return out
