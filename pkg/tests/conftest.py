"""Shared fixtures for the tcaq test suite."""

import numpy as np
import pytest

from tcaq.audit import configure_run_logger
from tcaq.calibration import sample_calibration_fp
from tcaq.diffusion import NoiseSchedule, ToyUNet, UNetConfig, generate_dataset, train_toy
from tcaq.pipeline import initialize
from tcaq.quantized import QuantSettings

# Small enough that a full forward pass is a few milliseconds.
TINY_UNET = UNetConfig(base_channels=4, mid_channels=8, temb_dim=8, groups=2)
TINY_CHAINS = 4
TINY_STEPS = 4

# Calibration of the trained toy used by the slow tests
TRAINED_CHAINS = 16
TRAINED_STEPS = 20


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="Run slow end-to-end tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end test that trains or reconstructs a model")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# =============================================================================
# Fixtures
# =============================================================================

@pytest.fixture
def seed():
    """Set random seed for reproducibility."""
    np.random.seed(42)
    yield
    np.random.seed(None)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def disabled_run_log():
    """Every test starts and ends with the run log switched off."""
    configure_run_logger(None)
    yield
    configure_run_logger(None)


@pytest.fixture(scope="session")
def sched():
    return NoiseSchedule.linear()


@pytest.fixture(scope="session")
def tiny_model():
    """An untrained tiny UNet; weights are seeded so results are stable."""
    return ToyUNet(TINY_UNET, seed=3)


@pytest.fixture(scope="session")
def tiny_cal(tiny_model, sched):
    """FP calibration set hooking every quantizable layer of the tiny UNet."""
    return sample_calibration_fp(tiny_model, n_chains=TINY_CHAINS, inference_steps=TINY_STEPS, seed=0, sched=sched)


@pytest.fixture(scope="session")
def tiny_config():
    return TINY_UNET


@pytest.fixture
def tiny_settings():
    return QuantSettings(weight_bits=4, act_bits=8, softmax_bits=8, groups=2)


@pytest.fixture
def tiny_qmodel(tiny_model, tiny_cal, tiny_settings):
    """A freshly initialized quantized model; tests may modify it."""
    qmodel, _ = initialize(tiny_model, tiny_cal, tiny_settings, search_grid=10)
    return qmodel


# =============================================================================
# Trained toy (slow tests only)
# =============================================================================

@pytest.fixture(scope="session")
def trained_run(sched):
    """The default training run: (model, loss history)."""
    history = []
    model = train_toy(generate_dataset(seed=0, n=2048), sched, history=history)
    return model, history


@pytest.fixture(scope="session")
def trained_model(trained_run):
    return trained_run[0]


@pytest.fixture(scope="session")
def trained_cal(trained_model, sched):
    """FP calibration set of the trained toy, every quantizable layer hooked."""
    return sample_calibration_fp(
        trained_model, n_chains=TRAINED_CHAINS, inference_steps=TRAINED_STEPS, seed=0, sched=sched
    )
