import numpy as np
import pytest

from rddpc.behavioral import partition, svd_reduce
from rddpc.config import load_config
from rddpc.harness import prepare_workspace

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}")


@pytest.fixture(scope="session")
def bench_cfg():
    return load_config()


@pytest.fixture(scope="session")
def noise_free_cfg():
    return load_config(overrides={"plant.noise_free": True})


@pytest.fixture(scope="session")
def bench_ws(bench_cfg):
    return prepare_workspace(bench_cfg)


@pytest.fixture(scope="session")
def noise_free_ws(noise_free_cfg):
    return prepare_workspace(noise_free_cfg)


@pytest.fixture(scope="session")
def bench_window(bench_ws):
    """A past window and square-wave reference taken from the validation record."""
    u, y = bench_ws.validation.inputs, bench_ws.validation.outputs
    k = 200
    return u[k:k + 5].ravel(), y[k:k + 5].ravel(), np.tile([0.4, 0, 0, 0], 5)
