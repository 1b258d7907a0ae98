import numpy as np
import pytest

from pclab.layers import Activation, DenseLayer, Network


def scalar_chain(weights, act="identity", dtype=np.float64):
    """1-unit-wide dense chain with the given weights and zero biases."""
    blocks = []
    for w in weights:
        layer = DenseLayer((1,), 1, Activation(act), None, None, dtype)
        layer.params["W"][...] = w
        blocks.append(layer)
    return Network(blocks, (1,))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def central_diff(f, arr, h=1e-6):
    """Full central-difference gradient of scalar ``f()`` w.r.t. ``arr``
    (modified in place and restored)."""
    g = np.zeros(arr.shape, dtype=np.float64)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-30))


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
