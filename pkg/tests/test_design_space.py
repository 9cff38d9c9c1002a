import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgetran import design_space as ds
from edgetran import sampling as S
from edgetran.design_space import ArchitectureConfig, EncoderLayerConfig, Head, HeadType
from edgetran.errors import InvalidConfig, MalformedEmbedding


def test_head_types_order():
    assert [t.value for t in ds.HEAD_TYPES] == ["SA-SDP", "SA-WMA", "LT-DFT", "LT-DCT", "DSC-5", "DSC-9", "DSC-13"]
    assert HeadType.DSC_9.kernel_size == 9 and HeadType.LT_DFT.kernel_size is None


def test_ff_ops_exhaustive():
    stacks = [s for d in (1, 2, 3) for s in itertools.product(ds.FF_WIDTHS, repeat=d)]
    assert len(stacks) == 258 == ds.N_FF_OPS
    idx = [ds.ff_op_index(s) for s in stacks]
    # canonical order: length ascending, then lexicographic over width indices
    assert idx == list(range(1, 259))
    assert all(ds.ff_op_decode(i) == s for i, s in zip(idx, stacks))
    assert ds.ff_op_index([256]) == 1 and ds.ff_op_decode(1) == (256,)


@pytest.mark.parametrize("bad", [[], [256] * 4, [300], [256, 100]])
def test_ff_op_invalid(bad):
    with pytest.raises(InvalidConfig):
        ds.ff_op_index(bad)


def test_mha_count_matches_binomials():
    assert sum(comb(7 + n - 1, n) for n in (2, 4, 8, 12)) == 28 + 210 + 3003 + 18564 == 21805 == ds.N_MHA_OPS
    assert ds.mha_op_index([HeadType.SA_SDP] * 2) == 1


def test_mha_blocks_ordered_by_head_count():
    starts = [ds.mha_block(n)[0] for n in ds.HEAD_COUNTS]
    assert starts == [1, 29, 239, 3242]
    assert ds.mha_op_decode(28) == (HeadType.DSC_13,) * 2
    assert ds.mha_op_decode(21805) == (HeadType.DSC_13,) * 12


def test_mha_block_exhaustive_small():
    # blocks for 2 and 4 heads, checked against itertools' own lexicographic order
    for n in (2, 4):
        start, size = ds.mha_block(n)
        combos = list(itertools.combinations_with_replacement(ds.HEAD_TYPES, n))
        assert len(combos) == size
        for k, m in enumerate(combos):
            assert ds.mha_op_index(m) == start + k
            assert ds.mha_op_decode(start + k) == m


def test_mha_round_trip_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.choice(ds.HEAD_COUNTS))
        m = tuple(sorted((ds.HEAD_TYPES[i] for i in rng.integers(0, 7, n)), key=lambda t: t.order))
        assert ds.mha_op_decode(ds.mha_op_index(m)) == m


@pytest.mark.parametrize("n", [1, 3, 6, 13])
def test_mha_invalid_head_count(n):
    with pytest.raises(InvalidConfig):
        ds.mha_op_index([HeadType.SA_SDP] * n)


def test_space_cardinality():
    assert 258 * 4 * 21805 == 22_502_760
    assert ds.space_cardinality([2]) == 22_502_760**2
    assert f"{ds.space_cardinality() / 10**88:.3g}" == "1.69"


def test_bert_tiny_embedding():
    e = ds.encode(ds.bert_tiny())
    ff = ds.ff_op_index([512])
    mha = ds.mha_op_index([HeadType.SA_SDP] * 2)
    assert list(e[:7]) == [2, 128, ff, mha, 128, ff, mha]
    assert len(e) == 37 and not e[7:].any()


def test_embedding_wrong_layer_count():
    e = ds.encode(ds.bert_tiny())
    e[0] = 3
    with pytest.raises(MalformedEmbedding):
        ds.decode(e)


def test_embedding_zero_triple_before_l():
    e = ds.encode(ds.uniform_arch(4, 128, [HeadType.SA_SDP] * 2, [512]))
    e[4:7] = 0
    with pytest.raises(MalformedEmbedding):
        ds.check_embedding(e)


def test_embedding_trailing_nonzero():
    e = ds.encode(ds.bert_tiny())
    e[10] = 5
    assert not ds.is_well_formed(e)


def test_round_trip_lhs_1000():
    for arch in S.sample(S.SamplerKind.LHS, 1000, 3):
        e = ds.encode(arch)
        assert ds.decode(e) == arch
        assert np.array_equal(ds.encode(ds.decode(e)), e)


def test_head_dim_allocation():
    assert ds.allocate_head_dims(128, 12) == [11] * 8 + [10] * 4
    layer = ds.make_layer(768, [HeadType.DSC_5] * 12, [1024])
    assert layer.hidden_size == sum(h.dim for h in layer.heads)


def test_validate():
    ds.validate(ds.bert_tiny())
    bad = ArchitectureConfig((EncoderLayerConfig((Head(HeadType.SA_SDP, 64),) * 2, (512,), 100),) * 2)
    with pytest.raises(InvalidConfig, match="hidden-size mismatch"):
        ds.validate(bad)
    layer = EncoderLayerConfig.build([(HeadType.SA_SDP, 10)] * 13, [64])
    with pytest.raises(InvalidConfig, match="head count"):
        ds.validate(ArchitectureConfig((layer,)), grid=False)


def test_free_form_allowed_off_grid():
    layer = EncoderLayerConfig.build([(HeadType.SA_SDP, 40), (HeadType.DSC_9, 24)], [200, 72])
    arch = ArchitectureConfig((layer,) * 3)
    ds.validate(arch, grid=False)
    assert not ds.is_valid(arch, grid=True)


def test_json_round_trip():
    arch = S.sample(S.SamplerKind.RANDOM, 1, 4)[0]
    doc = arch.to_dict()
    assert doc["schema_version"] == ds.SCHEMA_VERSION
    assert ArchitectureConfig.from_json(arch.to_json()) == arch
    doc["schema_version"] = 99
    with pytest.raises(InvalidConfig):
        ArchitectureConfig.from_dict(doc)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_property_sampled_embeddings_round_trip(seed):
    e = S.sample_embeddings(S.SamplerKind.RANDOM, 1, seed)[0]
    assert np.array_equal(ds.encode(ds.decode(e)), e)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(ds.FF_WIDTHS), min_size=1, max_size=3))
def test_property_ff_round_trip(stack):
    assert ds.ff_op_decode(ds.ff_op_index(stack)) == tuple(stack)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, ds.N_MHA_OPS))
def test_property_mha_round_trip(idx):
    assert ds.mha_op_index(ds.mha_op_decode(idx)) == idx
