import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from ptsample import geometry as G
from ptsample.diffcore import ParamStore, finite_diff_check
from ptsample.errors import InvalidArgument

SQUARE = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)

coord = st.floats(-2, 2, allow_nan=False, width=64)


def clouds(min_n=1, max_n=24):
    return st.integers(min_n, max_n).flatmap(lambda n: arrays(np.float64, (n, 3), elements=coord))


# -- value types -------------------------------------------------------------

def test_pointcloud_rejects_nan_and_empty():
    with pytest.raises(InvalidArgument):
        G.PointCloud(np.zeros((0, 3)))
    with pytest.raises(InvalidArgument):
        G.PointCloud([[0, 0, np.nan]])
    pc = G.PointCloud([[0, 0, 0], [1, 2, 3]])
    assert pc.n == 2
    with pytest.raises(ValueError):
        pc.points[0, 0] = 5.0


def test_matched_cloud_validates_indices():
    with pytest.raises(InvalidArgument):
        G.MatchedCloud((0, 0), 4)
    with pytest.raises(InvalidArgument):
        G.MatchedCloud((4,), 4)
    assert G.MatchedCloud((3, 1), 4).take(SQUARE).tolist() == [[1, 1, 0], [1, 0, 0]]


def test_loss_config_defaults_and_validation():
    assert G.LossConfig.for_task("classification").lam == 30
    assert G.LossConfig.for_task("reconstruction").lam == 0.01
    cfg = G.LossConfig()
    assert (cfg.beta, cfg.gamma, cfg.delta) == (1, 1, 0)
    with pytest.raises(InvalidArgument):
        G.LossConfig(beta=-1)


# -- nearest neighbour and losses -------------------------------------------

def test_nearest_neighbor_examples():
    assert G.nearest_neighbor((0, 0, 0), [[0, 0, 0]]) == (0, 0.0)
    i, d = G.nearest_neighbor((0.4, 0, 0), [[0, 0, 0], [1, 0, 0]])
    assert i == 0 and d == pytest.approx(0.16, abs=1e-15)
    S = [[5, 5, 5], [4, 4, 4], [1, 0, 0], [3, 3, 3], [9, 9, 9], [-1, 0, 0]]
    assert G.nearest_neighbor((0, 0, 0), S)[0] == 2
    with pytest.raises(InvalidArgument):
        G.nearest_neighbor((0, 0, 0), np.zeros((0, 3)))


def test_loss_examples():
    assert G.avg_nn_loss([[0, 0, 0]], [[1, 0, 0]]) == 1.0
    assert G.max_nn_loss([[0, 0, 0], [3, 0, 0]], [[0, 0, 0]]) == 9.0
    assert G.chamfer([[0, 0, 0]], [[2, 0, 0]]) == 8.0
    assert G.sampling_loss(SQUARE[[2, 0, 3, 1]], SQUARE, G.LossConfig(2, 3, 4)) == 0.0


def test_losses_reject_empty():
    for f in (G.avg_nn_loss, G.max_nn_loss, G.chamfer):
        with pytest.raises(InvalidArgument):
            f(np.zeros((0, 3)), SQUARE)


def test_random_8_vs_5_matches_double_loop(rng):
    a, b = rng.normal(size=(8, 3)), rng.normal(size=(5, 3))
    assert abs(G.avg_nn_loss(a, b) - oracles.avg_nn(a, b)) <= 1e-12
    assert abs(G.max_nn_loss(a, b) - oracles.max_nn(a, b)) <= 1e-12


def test_sampling_loss_beta0_is_chamfer(rng):
    Q, P = rng.normal(size=(7, 3)), rng.normal(size=(13, 3))
    assert G.sampling_loss(Q, P, G.LossConfig(beta=0, gamma=1, delta=0)) == pytest.approx(G.chamfer(Q, P), abs=1e-14)


def test_sampling_loss_composes_oracles(rng):
    Q, P = rng.normal(size=(4, 3)), rng.normal(size=(16, 3))
    want = oracles.avg_nn(Q, P) + oracles.max_nn(Q, P) + oracles.avg_nn(P, Q)
    assert abs(G.sampling_loss(Q, P, G.LossConfig(1, 1, 0)) - want) <= 1e-12
    want = oracles.sampling_loss(Q, P, 0.5, 2.0, 0.25)
    assert abs(G.sampling_loss(Q, P, G.LossConfig(0.5, 2.0, 0.25)) - want) <= 1e-12


def test_losses_batch_over_leading_axis(rng):
    A, B = rng.normal(size=(3, 6, 3)), rng.normal(size=(3, 9, 3))
    batched = G.chamfer(A, B)
    assert batched.shape == (3,)
    assert np.allclose(batched, [G.chamfer(a, b) for a, b in zip(A, B)], rtol=0, atol=1e-14)


@given(clouds())
def test_self_distances_are_zero(S):
    assert G.avg_nn_loss(S, S) == 0.0
    assert G.max_nn_loss(S, S) == 0.0
    assert G.chamfer(S, S) == 0.0


@given(clouds(), clouds())
def test_losses_nonnegative_and_chamfer_symmetric(A, B):
    assert G.avg_nn_loss(A, B) >= 0
    assert G.max_nn_loss(A, B) >= G.avg_nn_loss(A, B) - 1e-12
    assert G.chamfer(A, B) == G.chamfer(B, A)


def test_sampling_loss_gradient_wrt_q(rng):
    store = ParamStore(np.float64)
    q = store.add("q", rng.normal(size=(5, 3)))
    P = rng.normal(size=(11, 3))
    cfg = G.LossConfig(1.0, 1.0, 0.5)
    res = finite_diff_check(lambda: G.sampling_loss(q, P, cfg), store)
    assert res.max_rel_error <= 1e-4


def test_nn_kernel_gradient_reaches_both_sides(rng):
    store = ParamStore(np.float64)
    a = store.add("a", rng.normal(size=(6, 3)))
    b = store.add("b", rng.normal(size=(4, 3)))
    res = finite_diff_check(lambda: G.chamfer(a, b), store)
    assert res.max_rel_error <= 1e-4


# -- samplers ----------------------------------------------------------------

def test_fps_examples():
    assert G.fps(SQUARE, 2, 0).indices == (0, 3)
    assert G.fps(SQUARE, 4, 2).indices[0] == 2
    assert sorted(G.fps(SQUARE, 4, 2).indices) == [0, 1, 2, 3]
    with pytest.raises(InvalidArgument):
        G.fps(SQUARE, 5)
    with pytest.raises(InvalidArgument):
        G.fps(SQUARE, 2, start_index=4)


def test_fps_matches_greedy_oracle_64_points(rng):
    P = rng.uniform(-1, 1, size=(64, 3))
    assert list(G.fps(P, 8, 0).indices) == oracles.greedy_fps(P.tolist(), 8, 0)


def test_fps_ties_take_lowest_index():
    # from the origin, points 1 and 2 are equally far
    P = np.array([[0, 0, 0], [0, 2, 0], [2, 0, 0], [0.5, 0, 0]])
    assert G.fps(P, 2, 0).indices == (0, 1)


def test_random_sample_examples():
    assert sorted(G.random_sample(SQUARE, 4, 7).indices) == [0, 1, 2, 3]
    assert G.random_sample(SQUARE, 3, 11) == G.random_sample(SQUARE, 3, 11)
    with pytest.raises(InvalidArgument):
        G.random_sample(SQUARE, 5, 0)


def test_random_sample_m1_is_uniform():
    counts = np.zeros(4)
    for s in range(10_000):
        counts[G.random_sample(SQUARE, 1, s).indices[0]] += 1
    sigma = np.sqrt(10_000 * 0.25 * 0.75)
    assert np.all(np.abs(counts - 2500) <= 3 * sigma)


def test_voxel_examples(rng):
    P = rng.normal(size=(40, 3))
    one = G.voxel_sample(P, 1, initial_cell_size=100.0)
    centroid = P.mean(axis=0)
    assert one.indices == (int(np.argmin(((P - centroid) ** 2).sum(1))),)
    grid = np.array([[i, j, 0] for i in range(3) for j in range(3)], dtype=float) + 0.5
    assert G.voxel_sample(grid, 9, initial_cell_size=1.0).indices == tuple(range(9))
    with pytest.raises(InvalidArgument):
        G.voxel_sample(P, 3, initial_cell_size=0.0)


def test_voxel_two_blobs_one_each(rng):
    a = rng.normal(scale=0.05, size=(30, 3))
    b = rng.normal(scale=0.05, size=(30, 3)) + np.array([10.0, 0, 0])
    P = np.concatenate([a, b])
    got = G.voxel_sample(P, 2, initial_cell_size=50.0).indices
    assert sorted(i // 30 for i in got) == [0, 1]


@given(clouds(2, 30), st.data())
def test_voxel_output_is_valid_subset(P, data):
    m = data.draw(st.integers(1, P.shape[0]))
    cell = data.draw(st.floats(0.01, 5.0))
    sel = G.voxel_sample(P, m, cell)
    assert len(sel.indices) == m == len(set(sel.indices))


def test_match_examples():
    assert G.match(SQUARE[[3, 1]], SQUARE).indices == (3, 1)
    Q = np.array([[0.9, 0.95, 0.0], [0.95, 0.9, 0.0]])
    assert G.match(Q, SQUARE).indices == (3, 0)
    with pytest.raises(InvalidArgument):
        G.match(np.zeros((5, 3)), SQUARE)


@given(clouds(1, 30), st.data())
def test_match_postcondition(P, data):
    m = data.draw(st.integers(1, P.shape[0]))
    Q = data.draw(arrays(np.float64, (m, 3), elements=coord))
    out = G.match(Q, P)
    assert len(out.indices) == m and len(set(out.indices)) == m
    assert all(0 <= i < P.shape[0] for i in out.indices)
