import numpy as np
import pytest

from ptsample.diffcore import ParamStore, finite_diff_check, ops
from ptsample.errors import InvalidArgument
from ptsample.pointnet import FEATURE_WIDTHS, extract_features, init_feature_params


def _params(dtype=np.float64, seed=0):
    store = ParamStore(dtype)
    init_feature_params(store, np.random.default_rng(seed))
    # non-trivial running statistics so eval mode is not an identity normalisation
    rng = np.random.default_rng(seed + 1)
    for k, t in store.items():
        if k.endswith("running_mean"):
            t.value[...] = rng.normal(scale=0.1, size=t.shape)
        elif k.endswith("running_var"):
            t.value[...] = rng.uniform(0.5, 2.0, size=t.shape)
    return store


def test_shapes_and_global_max(rng):
    P = rng.normal(size=(20, 3))
    X, g = extract_features(P, _params())
    assert X.shape == (20, 128) and g.shape == (128,)
    assert np.array_equal(g.value, X.value.max(axis=0))
    assert FEATURE_WIDTHS[-1] == 128


def test_duplicate_rows(rng):
    P = np.repeat(rng.normal(size=(1, 3)), 7, axis=0)
    X, g = extract_features(P, _params())
    assert np.all(X.value == X.value[0])
    assert np.array_equal(g.value, X.value[3])


@pytest.mark.parametrize("seed", range(5))
def test_permutation_equivariance_exact(seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(33, 3))
    perm = rng.permutation(33)
    params = _params()
    X, g = extract_features(P, params)
    Xp, gp = extract_features(P[perm], params)
    assert np.array_equal(Xp.value, X.value[perm])
    assert np.array_equal(gp.value, g.value)


def test_batch_matches_single_clouds(rng):
    P = rng.normal(size=(3, 10, 3))
    params = _params()
    Xb, gb = extract_features(P, params)
    for i in range(3):
        X, g = extract_features(P[i], params)
        assert np.allclose(Xb.value[i], X.value, rtol=0, atol=1e-12)


def test_train_mode_updates_running_stats(rng):
    params = _params()
    before = params["feat.bn0.running_mean"].value.copy()
    extract_features(rng.normal(size=(16, 3)), params, mode="train")
    assert not np.array_equal(before, params["feat.bn0.running_mean"].value)


def test_errors():
    params = _params()
    with pytest.raises(InvalidArgument):
        extract_features(np.zeros((1, 3)), params, mode="train")
    with pytest.raises(InvalidArgument):
        extract_features(np.zeros((4, 3)), params, mode="bogus")
    with pytest.raises(InvalidArgument):
        extract_features(np.zeros((4, 2)), params)


@pytest.mark.parametrize("mode", ["eval", "train"])
def test_gradient_of_sum_g_n8(mode):
    params = _params()
    P = np.random.default_rng(7).normal(size=(8, 3))
    res = finite_diff_check(lambda: ops.mean(extract_features(P, params, mode)[1]), params,
                            max_coords=40, kink_tol=1e-2)
    assert res.max_rel_error <= 1e-4, res
    assert res.skipped <= 0.02 * (res.checked + res.skipped)
