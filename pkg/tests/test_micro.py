import math

import numpy as np
import pytest

from edgetran import design_space as ds
from edgetran import micro as M
from edgetran.design_space import ArchitectureConfig, EncoderLayerConfig, HeadType as H
from edgetran.errors import BuildError, TrainError

SMALL = ArchitectureConfig(tuple(ds.make_layer(32, [H.SA_SDP, H.DSC_5], [64]) for _ in range(2)))


def test_mixing_param_counts():
    assert M.mixing_param_count(H.LT_DFT, 64) == 0
    assert M.mixing_param_count(H.LT_DCT, 64) == 0
    assert M.mixing_param_count(H.SA_SDP, 64) == 0
    assert M.mixing_param_count(H.SA_WMA, 64) == 64 * 64
    assert M.mixing_param_count(H.DSC_9, 64) == 9 * 64


def test_build_deterministic():
    a, b = M.build(ds.bert_tiny(), 3), M.build(ds.bert_tiny(), 3)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_bert_tiny_param_count_closed_form():
    V, S, h, f = M.VOCAB, M.MAX_SEQ, 128, 512
    # per layer: Q, K, V, O maps summed over heads (sum of head dims = h), output bias,
    # two layer norms, and the h -> f -> h feed-forward with biases
    per_layer = 4 * h * h + h + 2 * h + (h * f + f) + (f * h + h) + 2 * h
    expected = V * h + S * h + 2 * per_layer + h * V + V
    model = M.build(ds.bert_tiny(), 0)
    assert sum(p.size for p in model.params.values()) == expected


def _random_arch(rng):
    layers = []
    for _ in range(int(rng.integers(1, 4))):
        kinds = [ds.HEAD_TYPES[i] for i in rng.integers(0, 7, int(rng.integers(1, 5)))]
        heads = [(k, int(rng.integers(2, 9))) for k in kinds]
        ff = [int(w) for w in rng.integers(4, 17, int(rng.integers(1, 4)))]
        layers.append(EncoderLayerConfig.build(heads, ff))
    return ArchitectureConfig(tuple(layers))


def test_forward_shapes_random_sweep():
    rng = np.random.default_rng(0)
    for _ in range(100):
        arch = _random_arch(rng)
        m = M.build(arch, 0)
        tokens = rng.integers(1, M.VOCAB, size=(2, M.MAX_SEQ))
        assert m.forward(tokens).shape == (2, M.MAX_SEQ, M.VOCAB)


@pytest.mark.parametrize("kind", [H.SA_SDP, H.LT_DCT, H.DSC_9])
def test_grad_check_blocks(kind):
    arch = ArchitectureConfig((ds.make_layer(16, [kind, kind], [24]),))
    assert M.grad_check(M.build(arch, 0), n_coords=60) < 1e-5


def test_training_reduces_loss():
    for seed in range(5):
        m = M.build(SMALL, seed)
        m10, _, _ = M.train_steps(m, 0, 10)
        m500, _, _ = M.train_steps(m10, 0, 490)
        assert M.evaluate_loss(m500) < M.evaluate_loss(m10)


def test_zero_steps_rejected():
    with pytest.raises(TrainError):
        M.train_steps(M.build(SMALL, 0), 0, 0)


def test_all_masked_loss_is_uniform():
    m = M.build(ds.bert_tiny(), 0)
    inputs = np.full((4, M.MAX_SEQ), M.MASK_ID)
    targets = np.random.default_rng(0).integers(1, M.VOCAB, (4, M.MAX_SEQ))
    loss = m.loss(inputs, targets, np.ones((4, M.MAX_SEQ), bool))
    assert abs(loss - math.log(M.VOCAB)) < 0.1


def test_block_stats_cover_every_block():
    _, _, st = M.train_steps(M.build(SMALL, 0), 0, 8)
    heads = {(j, i) for j in range(2) for i in range(2)}
    assert set(st.head_grad_norm) == heads == set(st.head_weight_mag)
    assert set(st.ff_weight_mag) == {(0, 0), (1, 0)} == set(st.ff_grad_norm)
    assert all(v > 0 for v in st.head_grad_norm.values())


def test_ot_identity():
    parent = M.build(SMALL, 1)
    child = M.transfer_weights(parent, SMALL, "OT", seed=9)
    assert all(np.array_equal(child.params[k], parent.params[k]) for k in parent.params)


def test_rp_variance():
    R = M.rp_matrix(200, 64, np.random.default_rng(0))
    assert R.size >= 10_000
    assert 0.8 / 64 <= R.var() <= 1.2 / 64


def test_ot_slice():
    parent_arch = ArchitectureConfig((ds.make_layer(32, [H.SA_SDP, H.DSC_5], [32]),))
    child_arch = ArchitectureConfig((ds.make_layer(32, [H.SA_SDP, H.DSC_5], [16]),))
    parent = M.build(parent_arch, 0)
    child = M.transfer_weights(parent, child_arch, "OT")
    np.testing.assert_array_equal(child.params["layer0.ff0.W"], parent.params["layer0.ff0.W"][:, :16])
    np.testing.assert_array_equal(child.params["layer0.ff1.W"], parent.params["layer0.ff1.W"][:16, :])


def test_transfer_keeps_matching_heads():
    parent = M.build(SMALL, 2)
    child_arch = SMALL.replace_layer(0, ds.make_layer(48, [H.SA_SDP, H.DSC_5, H.LT_DFT], [64]))
    child = M.transfer_weights(parent, child_arch, "RP", seed=1)
    # layer 1 is unchanged and copied verbatim
    assert np.array_equal(child.params["layer1.head0.Wq"], parent.params["layer1.head0.Wq"])
    with pytest.raises(ValueError):
        M.transfer_weights(parent, SMALL, "XX")


def test_checkpoint_round_trip(tmp_path):
    m, _, _ = M.train_steps(M.build(SMALL, 0), 0, 5)
    M.save_checkpoint(m, tmp_path / "c.npz")
    back = M.load_checkpoint(tmp_path / "c.npz")
    assert back.arch == m.arch and back.steps_trained == 5
    assert all(np.array_equal(back.params[k], m.params[k]) for k in m.params)


def test_build_errors():
    zero_ff = ArchitectureConfig((EncoderLayerConfig.build([(H.SA_SDP, 8)], [0]),))
    with pytest.raises(BuildError):
        M.build(zero_ff)
