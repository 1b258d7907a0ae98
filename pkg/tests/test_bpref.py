import numpy as np
import pytest

from pclab.bpref import bp_backward, bp_forward, loss_value, output_delta
from pclab.layers import build_mlp, build_vgg
from pclab.pcgraph import init_forward

from conftest import central_diff, rel_err, scalar_chain


@pytest.mark.parametrize("phase", ["inference", "eval"])
def test_logits_bitwise_equal_to_pc_initialisation(rng, phase):
    net = build_vgg("vgg5-narrow", (3, 32, 32), 10, bn=True, seed=0)
    o = rng.normal(size=(2, 3, 32, 32)).astype(np.float32)
    logits, _ = bp_forward(net, o, phase)
    assert logits.tobytes() == init_forward(net, o, phase).mu0[-1].tobytes()


def test_single_linear_layer_gradient():
    # identity first layer feeds x = 3 into the linear output layer W = 2
    net = scalar_chain([1.0, 2.0])
    logits, tape = bp_forward(net, np.array([[3.0]]), "inference", "squared_error")
    grads, sq, loss = bp_backward(net, tape, np.array([[1.0]]))
    # d/dW 1/2 (Wx - y)^2 = (mu - y) x
    assert grads[2]["W"][0, 0] == (6.0 - 1.0) * 3.0
    assert loss == 0.5 * 25.0 and sq[1] == 12.5


@pytest.mark.parametrize("loss", ["cross_entropy", "squared_error"])
def test_gradients_match_finite_difference(rng, loss):
    net = build_mlp(3, (4,), 5, n_classes=3, act="gelu", bn=True, seed=1, dtype=np.float64)
    x = rng.normal(size=(6, 4))
    y = np.eye(3)[rng.integers(0, 3, 6)]
    _, tape = bp_forward(net, x, "inference", loss)
    grads, _, _ = bp_backward(net, tape, y)

    def f():
        return loss_value(bp_forward(net, x, "inference", loss)[0], y, loss)

    for l in (1, 2, 3):
        scale = max(float(np.abs(g).max()) for g in grads[l].values())
        for name, p in net[l].parameters().items():
            assert float(np.abs(grads[l][name] - central_diff(f, p)).max()) <= 1e-6 * scale, (l, name)


def test_cross_entropy_delta():
    z = np.array([[0.0, 0.0]])
    np.testing.assert_allclose(output_delta(z, np.array([[1.0, 0.0]])), [[-0.5, 0.5]])
    assert loss_value(z, np.array([[1.0, 0.0]])) == pytest.approx(np.log(2))


def test_unknown_loss():
    with pytest.raises(ValueError):
        bp_forward(scalar_chain([1.0, 1.0]), np.ones((1, 1)), loss="hinge")
