import numpy as np
import pytest

from pclab import gradcheck as gc
from pclab import layers


def test_suite_passes_float64():
    rep = gc.gradcheck(8, dtype=np.float64, seed=1)
    assert rep.passed and rep.tolerance == 1e-6
    assert {r.kind for r in rep.results} == {"activity", "standard", "forward"}


def test_suite_passes_float32():
    rep = gc.gradcheck(8, dtype=np.float32, seed=2)
    assert rep.passed, rep.summary()


def test_corrupted_adjoint_is_caught(monkeypatch):
    real = layers.DenseLayer.backward

    def wrong(self, dout, cache, need_input=True):
        dx, g = real(self, dout, cache, need_input)
        return (None if dx is None else dx * 1.01), g

    monkeypatch.setattr(layers.DenseLayer, "backward", wrong)
    rep = gc.gradcheck(4, dtype=np.float64, seed=0)
    assert not rep.passed
    assert rep.worst.kind == "activity"
    assert "FAIL" in rep.summary()


def test_corrupted_weight_gradient_is_caught(monkeypatch):
    real = layers.DenseLayer.backward

    def wrong(self, dout, cache, need_input=True):
        dx, g = real(self, dout, cache, need_input)
        g = dict(g)
        g["W"] = g["W"] * 0.9
        return dx, g

    monkeypatch.setattr(layers.DenseLayer, "backward", wrong)
    rep = gc.gradcheck(4, dtype=np.float64, seed=0)
    assert not rep.passed and rep.worst.kind in ("standard", "forward")


@pytest.mark.parametrize("kind,bn", [("dense", True), ("conv", True), ("conv", False)])
def test_random_network_layouts(kind, bn):
    net = gc.random_network(np.random.default_rng(0), "gelu", kind, bn, np.float64)
    assert net.L >= 3 and (len(net.bn_layers()) > 0) == bn
    assert gc.to_float64(gc.random_network(np.random.default_rng(0), "relu", kind, bn)).dtype == np.float64
