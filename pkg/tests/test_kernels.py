"""The numba and numpy kernel paths must agree bit for bit."""
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from edgetran import _kernels as K
from edgetran import regressors as R

needs_numba = pytest.mark.skipif(K.grow_tree_numba is None, reason="numba not installed")


def _data(n=300, d=5, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    X[:, 1] = np.round(X[:, 1] * 4)  # a few distinct values
    y = np.sin(4 * X[:, 0]) + X[:, 1] * X[:, 2] + 0.1 * rng.standard_normal(n)
    return X, y


@needs_numba
@pytest.mark.parametrize("depth,min_leaf", [(1, 1), (4, 2), (8, 5)])
def test_grow_tree_parity(depth, min_leaf):
    X, y = _data()
    b = R.make_bins(X, 64)
    a = K.grow_tree_numpy(b.codes, y, b.n_bins, b.max_bins, depth, min_leaf)
    n = K.grow_tree_numba(b.codes, y, b.n_bins, b.max_bins, depth, min_leaf)
    for u, v in zip(a, n):
        np.testing.assert_array_equal(u, v)


@needs_numba
def test_predict_parity():
    X, y = _data()
    m = R.fit("gbdt", X, y, {"n_trees": 30})
    Xt = np.random.default_rng(1).random((50, 5))
    np.testing.assert_array_equal(K.forest_predict_numpy(*m._flat, Xt), K.forest_predict_numba(*m._flat, Xt))
    t = m.trees_[0]
    args = (t.feature, t.threshold, t.left, t.right, t.value, Xt)
    np.testing.assert_array_equal(K.tree_predict_numpy(*args), K.tree_predict_numba(*args))


_SCRIPT = """
import json, numpy as np
from edgetran import _kernels, regressors as R
rng = np.random.default_rng(0)
X = rng.random((150, 4)); y = X[:, 0] ** 2 + X[:, 1]
m = R.fit("gbdt", X, y, {"n_trees": 40})
mu, s = m.predict_with_uncertainty(rng.random((20, 4)))
print(json.dumps({"numba": _kernels.USE_NUMBA, "mu": mu.tolist(), "s": s.tolist()}))
"""


def _run(flag):
    env = dict(os.environ, EDGETRAN_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", _SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


@needs_numba
def test_env_flag_selects_fallback_with_identical_results():
    off, on = _run("0"), _run("1")
    assert off["numba"] is False and on["numba"] is True
    assert off["mu"] == on["mu"] and off["s"] == on["s"]
