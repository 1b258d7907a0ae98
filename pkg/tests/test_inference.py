import numpy as np
import pytest

from pclab.errors import DivergenceError
from pclab.inference import InferenceConfig, activity_gradients, relax, relax_step
from pclab.layers import build_mlp
from pclab.pcgraph import PrecisionSchedule, clamp_output, energy, init_forward, refresh_errors

from conftest import central_diff, rel_err, scalar_chain

# frozen from tests/oracles/derive_values.py (w1=2, w2=3, o=1, y=7, lr=0.05)
SCALAR_TRAJ = [2.0, 2.15, 2.225, 2.2625]

U = PrecisionSchedule.uniform()


def _clamped(net, rng, B=4, sched=U):
    o = rng.normal(size=(B,) + net.input_shape)
    y = rng.normal(size=(B, net.output_size))
    return clamp_output(init_forward(net, o), y, sched)


def test_scalar_chain_trajectory():
    net = scalar_chain([2.0, 3.0])
    st = clamp_output(init_forward(net, np.array([[1.0]])), np.array([[7.0]]), U)
    traj = [float(st.x[1][0, 0])]
    cfg = InferenceConfig(3, 0.05)
    st.T = 3
    for _ in range(3):
        relax_step(net, st, U, cfg)
        traj.append(float(st.x[1][0, 0]))
    np.testing.assert_allclose(traj, SCALAR_TRAJ, rtol=1e-12)
    assert st.t == 3


def test_t_equals_one_is_a_single_step(rng):
    net = build_mlp(3, (5,), 6, n_classes=2, seed=0, dtype=np.float64)
    st = _clamped(net, rng)
    st, trace = relax(net, st, U, InferenceConfig(1, 0.1))
    assert st.t == 1 and len(trace) == 1


@pytest.mark.parametrize("sched", [U, PrecisionSchedule.spiking(0.5), PrecisionSchedule.decaying(1.0)])
def test_trace_length_and_clamps(rng, sched):
    net = build_mlp(4, (5,), 6, n_classes=3, seed=1, dtype=np.float64)
    st = _clamped(net, rng, sched=sched)
    o, y = st.x[0].copy(), st.x[-1].copy()
    st, trace = relax(net, st, sched, InferenceConfig(7, 0.1))
    assert len(trace) == 7 and [r.t for r in trace] == list(range(1, 8))
    np.testing.assert_array_equal(st.x[0], o)
    np.testing.assert_array_equal(st.x[-1], y)


def test_activity_gradient_matches_finite_difference(rng):
    net = build_mlp(4, (5,), 6, n_classes=3, act="gelu", seed=2, dtype=np.float64)
    st = _clamped(net, rng)
    relax(net, st, U, InferenceConfig(2, 0.1))
    sig = np.array([1.0, 0.7, 2.0, 1.3, 1.0])
    g = activity_gradients(net, st, sig)
    B = st.batch_size

    def E():
        refresh_errors(st, net)
        return B * sum(0.5 * float(np.sum(st.eps[l] ** 2)) / B / sig[l] for l in range(1, 5))

    for l in (1, 2, 3):
        assert rel_err(g[l], central_diff(E, st.x[l])) <= 1e-6


def test_locality(rng):
    net = build_mlp(6, (5,), 6, n_classes=3, seed=3, dtype=np.float64)
    st = _clamped(net, rng)
    relax(net, st, U, InferenceConfig(2, 0.2))
    sig = np.ones(7)
    l = 3
    before = activity_gradients(net, st, sig)[l].copy()
    for j in (1, 5):  # neither l-1, l nor l+1
        st.x[j] = st.x[j] + rng.normal(size=st.x[j].shape)
    refresh_errors(st, net)
    np.testing.assert_array_equal(activity_gradients(net, st, sig)[l], before)
    st.x[4] = st.x[4] + 1.0
    refresh_errors(st, net)
    assert not np.array_equal(activity_gradients(net, st, sig)[l], before)


def test_energy_descends_for_small_steps(rng):
    net = build_mlp(4, (5,), 8, n_classes=3, act="gelu", seed=4, dtype=np.float64)
    st = _clamped(net, rng)
    st, trace = relax(net, st, U, InferenceConfig(30, 0.05))
    e = [r.total for r in trace]
    assert all(b <= a + 1e-12 for a, b in zip(e, e[1:]))


def test_convergence_tolerance_stops_early(rng):
    # smooth activation: ReLU activities can chatter across a kink forever
    net = build_mlp(3, (5,), 6, n_classes=2, act="gelu", seed=5, dtype=np.float64)
    st = _clamped(net, rng)
    st, trace = relax(net, st, U, InferenceConfig(500, 0.1, convergence_tol=1e-10))
    assert len(trace) < 500 and st.t == len(trace)


def test_divergence_names_the_layer(rng):
    net = build_mlp(4, (5,), 6, n_classes=3, seed=6, dtype=np.float64)
    st = _clamped(net, rng)
    with pytest.raises(DivergenceError) as exc:
        with np.errstate(all="ignore"):
            relax(net, st, U, InferenceConfig(400, 50.0), batch=17)
    assert exc.value.layer is not None and 1 <= exc.value.layer <= 4
    assert exc.value.batch == 17
    assert "layer" in str(exc.value)


def test_momentum_matches_heavy_ball():
    net = scalar_chain([2.0, 3.0])
    st = clamp_output(init_forward(net, np.array([[1.0]])), np.array([[7.0]]), U)
    cfg = InferenceConfig(2, 0.05, momentum_x=0.5)
    st.T = 2
    relax_step(net, st, U, cfg)
    # g0 = -3 -> x = 2.15 ; g1 = 0.15 - 3 * (7 - 6.45) = -1.5, v = -1.5 - 1.5 = -3
    relax_step(net, st, U, cfg)
    assert st.x[1][0, 0] == pytest.approx(2.15 + 0.05 * 3.0)


def test_last_layer_lr_decay():
    net = scalar_chain([2.0, 3.0])
    st = clamp_output(init_forward(net, np.array([[1.0]])), np.array([[7.0]]), U)
    cfg = InferenceConfig(2, 0.5, last_layer_lr_decay=True)
    st.T = 2
    relax_step(net, st, U, cfg)
    assert st.x[1][0, 0] == pytest.approx(2.0 + 0.5 * 3.0)
    x1 = st.x[1][0, 0]
    g = (x1 - 2.0) - 3.0 * (7.0 - 3.0 * x1)
    relax_step(net, st, U, cfg)
    assert st.x[1][0, 0] == pytest.approx(x1 - 0.25 * g)


def test_config_validation():
    for kw in ({"T": 0, "lr_x": 0.1}, {"T": 2, "lr_x": -0.1}, {"T": 2, "lr_x": 0.1, "momentum_x": 1.0}):
        with pytest.raises(ValueError):
            InferenceConfig(**kw)


def test_energy_report_is_at_state_time(rng):
    net = build_mlp(4, (5,), 6, n_classes=3, seed=7, dtype=np.float64)
    sched = PrecisionSchedule.decaying(1.0)
    st = _clamped(net, rng, sched=sched)
    st, trace = relax(net, st, sched, InferenceConfig(4, 0.1))
    again = energy(st, sched, T=4)
    np.testing.assert_allclose(again.per_layer, trace[-1].per_layer)
