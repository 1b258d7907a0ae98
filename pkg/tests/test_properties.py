import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pclab.checkpoint import read_tensors, write_tensors
from pclab.dataio import parse_idx
from pclab.layers import build_mlp
from pclab.learning import warmup_cosine_lr
from pclab.pcgraph import PrecisionSchedule, layer_energies


@st.composite
def depth_and_time(draw):
    L = draw(st.integers(2, 16))
    T = draw(st.integers(L - 1, 24))
    l = draw(st.integers(1, L - 1))
    return L, T, l


@given(depth_and_time(), st.sampled_from([0.5, 1.0, 1.5, 2.0]))
def test_decaying_inverse_precisions_sum_to_one(dims, k):
    L, T, l = dims
    s = PrecisionSchedule.decaying(k)
    inv = [1 / s.sigma(l, t, L, T) for t in range(L - l, T + 1)]
    assert abs(sum(inv) - 1) < 1e-9
    assert all(a < b for a, b in zip(inv[1:], inv))  # precision decays
    assert all(s.sigma(l, t, L, T) == 1.0 for t in range(0, L - l))


@given(depth_and_time(), st.floats(1e-3, 0.9))
def test_spiking_hits_each_hidden_layer_once(dims, alpha):
    L, T, l = dims
    s = PrecisionSchedule.spiking(alpha)
    assert [t for t in range(T + 1) if s.sigma(l, t, L, T) != 1.0] == [L - l]


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
                  elements=st.floats(-1e3, 1e3)),
       st.floats(1e-3, 1e3))
def test_energy_nonnegative_and_scaled(e, c):
    a = layer_energies([None, e], np.array([1.0, 1.0]))
    b = layer_energies([None, e], np.array([1.0, c]))
    assert a[0] >= 0 and np.isclose(b[0], a[0] / c)


@given(st.integers(0, 300), st.integers(1, 200))
def test_warmup_cosine_stays_in_band(step, total):
    lr = warmup_cosine_lr(step, total, 1.0)
    assert 0.1 - 1e-12 <= lr <= 1.1 + 1e-12


@given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6)))
def test_idx_round_trip(arr):
    buf = (0x0800 | arr.ndim).to_bytes(4, "big") + b"".join(d.to_bytes(4, "big") for d in arr.shape)
    out = parse_idx(buf + arr.tobytes(), 0x0800 | arr.ndim)
    assert np.array_equal(out, arr)


@settings(max_examples=25, deadline=None)
@given(st.dictionaries(st.text("abcdefgh.", min_size=1, max_size=6),
                       hnp.arrays(st.sampled_from([np.float32, np.float64, np.int64]),
                                  hnp.array_shapes(min_dims=0, max_dims=3, max_side=4)),
                       max_size=4))
def test_checkpoint_round_trip(tmp_path_factory, tensors):
    path = tmp_path_factory.mktemp("ck") / "t.ckpt"
    write_tensors(path, tensors)
    back, _ = read_tensors(path)
    assert back.keys() == tensors.keys()
    for k in tensors:
        assert back[k].tobytes() == tensors[k].tobytes() and back[k].shape == tensors[k].shape


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
def test_mlp_builder_is_seed_deterministic(depth, seed):
    assert build_mlp(depth, (5,), 7, 3, seed=seed).checksum() == build_mlp(depth, (5,), 7, 3, seed=seed).checksum()
