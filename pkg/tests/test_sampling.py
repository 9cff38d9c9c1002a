import numpy as np
import pytest

from edgetran import design_space as ds
from edgetran import sampling as S
from edgetran.design_space import HeadType

# first 8 points in 2-D, worked out by hand from the radical-inverse definitions
SOBOL_8 = [(0, 0), (.5, .5), (.75, .25), (.25, .75), (.375, .375), (.875, .875), (.625, .125), (.125, .625)]
HALTON_8 = [(1 / 2, 1 / 3), (1 / 4, 2 / 3), (3 / 4, 1 / 9), (1 / 8, 4 / 9), (5 / 8, 7 / 9), (3 / 8, 2 / 9),
            (7 / 8, 5 / 9), (1 / 16, 8 / 9)]
HAMMERSLY_8 = [(0, 0), (1 / 8, 1 / 2), (2 / 8, 1 / 4), (3 / 8, 3 / 4), (4 / 8, 1 / 8), (5 / 8, 5 / 8), (6 / 8, 3 / 8),
               (7 / 8, 7 / 8)]


def test_reference_sequences():
    np.testing.assert_allclose(S.sobol(8, 2), SOBOL_8, atol=1e-15)
    np.testing.assert_allclose(S.halton(8, 2), HALTON_8, atol=1e-15)
    np.testing.assert_allclose(S.hammersly(8, 2), HAMMERSLY_8, atol=1e-15)


@pytest.mark.parametrize("kind", list(S.SamplerKind))
def test_deterministic_and_valid(kind):
    a = S.sample(kind, 32, 5)
    assert a == S.sample(kind, 32, 5)
    for arch in a:
        ds.validate(arch, grid=True)
        assert ds.decode(ds.encode(arch)) == arch


def test_lhs_16_distinct():
    archs = S.sample(S.SamplerKind.LHS, 16, 0)
    assert len({tuple(ds.encode(a)) for a in archs}) == 16


def test_single_random_sample():
    archs = S.sample(S.SamplerKind.RANDOM, 1, 0)
    assert len(archs) == 1
    assert len(S.diversity_report(archs).pairwise_distances) == 0


def test_lhs_stratification():
    n = 50
    U = S.unit_points(S.SamplerKind.LHS, n, 9)
    for col in U.T:
        assert sorted(np.floor(col * n).astype(int)) == list(range(n))


def test_categorize():
    wide = ds.uniform_arch(8, 256, [HeadType.SA_SDP] * 8, [512])
    assert S.categorize(wide) == "deep-wide"
    assert S.categorize(ds.bert_tiny()) == "shallow-narrow"
    layers = [ds.make_layer(128, [HeadType.SA_SDP] * n, [512]) for n in [2] * 5 + [12] * 5]
    assert S.categorize(ds.ArchitectureConfig(tuple(layers))) == "deep-narrow"


def test_identical_configs_zero_distance():
    rep = S.diversity_report([ds.bert_tiny(), ds.bert_tiny()])
    assert rep.quartiles == (0.0, 0.0, 0.0)
    assert list(rep.pairwise_distances) == [0.0]


def test_report_sizes():
    archs = S.sample(S.SamplerKind.HALTON, 40, 1)
    rep = S.diversity_report(archs)
    assert len(rep.pairwise_distances) == 40 * 39 // 2
    assert sum(rep.category_counts.values()) == 40
    q = rep.quartiles
    assert q[0] <= q[1] <= q[2]


def test_lhs_covers_categories():
    hits = 0
    for seed in range(20):
        counts = S.diversity_report(S.sample(S.SamplerKind.LHS, 16, seed)).category_counts
        hits += all(v >= 1 for v in counts.values())
    assert hits >= 16
