import sys
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

torch.set_num_threads(1)


def make_traj(H=5, ds=3, da=2, seed=0, rewards=True, env_id="toy"):
    from prefsim.data import Trajectory

    rng = np.random.default_rng(seed)
    return Trajectory(rng.normal(size=(H, ds)), rng.normal(size=(H, da)),
                      rng.normal(size=H) if rewards else None, env_id)


def traj_with_return(ret, H=4, env_id="toy"):
    from prefsim.data import Trajectory

    r = np.full(H, ret / H)
    return Trajectory(np.zeros((H, 2)) + ret, np.zeros((H, 1)), r, env_id)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def hopper_replay():
    from prefsim.envs import REPLAY_MIXTURE, generate_offline_dataset, make_env, mixture

    env = make_env("LineHopper")
    return generate_offline_dataset(env, mixture(env, REPLAY_MIXTURE), 60, seed=5)


@pytest.fixture(scope="session")
def tiny_encoder():
    """Untrained small encoder over 5-dim features (LineHopper state + action)."""
    from prefsim.encoder import EncoderConfig, SetEncoder

    torch.manual_seed(0)
    enc = SetEncoder(5, EncoderConfig(d_model=16, ff_dim=16, z_dim=4, n_heads=2))
    enc.eval()
    return enc


# acceptance criteria record one verdict line each; printed together at the end
ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
