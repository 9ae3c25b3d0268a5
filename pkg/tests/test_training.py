import inspect

import numpy as np
import pytest

from ptsample import apsnet, data, geometry, tasknets as tn, training as tr
from ptsample.errors import InvalidArgument, InvalidState


@pytest.fixture(scope="module")
def tiny():
    return data.generate_synthetic(per_class=6, n=32, seed=2)


@pytest.fixture(scope="module")
def clf(tiny):
    cfg = tr.TaskTrainConfig(epochs=3, batch_size=8, dtype="float64")
    return tr.train_task_net(tiny.clouds, tiny.labels, "classification", cfg, num_classes=4)


def cfg64(**kw):
    base = dict(task="classification", m=4, epochs=2, batch_size=8, dtype="float64", seed=5)
    base.update(kw)
    return tr.TrainConfig(**base)


def test_train_config_defaults():
    c = tr.TrainConfig()
    assert (c.epochs, c.batch_size, c.lr, c.loss.lam) == (400, 128, 0.01, 30)
    r = tr.TrainConfig(task="reconstruction")
    assert (r.lr, r.loss.lam) == (0.0005, 0.01)
    assert c.sizes == (8, 16, 32, 64, 128)
    with pytest.raises(InvalidArgument):
        tr.TrainConfig(mode="other")
    with pytest.raises(InvalidArgument):
        tr.TrainConfig(epochs=0)


def test_lr_schedule_matches_recorded(tiny, clf):
    cfg = cfg64(epochs=5, decay_every=2, lr=0.01)
    metrics = tr.Metrics()
    tr.train_sampler_supervised(tiny.clouds, tiny.labels, clf, 4, cfg, metrics)
    assert metrics.get("lr") == [0.01 * 0.7 ** (e // 2) for e in range(5)]
    default = cfg64(lr=0.01)
    assert [default.lr_at(e) for e in (0, 19, 20, 39, 40)] == [0.01, 0.01, 0.01 * 0.7, 0.01 * 0.7, 0.01 * 0.7 ** 2]


def test_task_net_training_deterministic_and_decreasing(tmp_path):
    ds = data.generate_synthetic(per_class=25, n=64, seed=0)
    cfg = tr.TaskTrainConfig(epochs=5)
    m1, m2 = tr.Metrics(), tr.Metrics()
    a = tr.train_task_net(ds.clouds, ds.labels, "classification", cfg, metrics=m1)
    b = tr.train_task_net(ds.clouds, ds.labels, "classification", cfg, metrics=m2)
    tn.save_task(tmp_path / "a.apsw", a)
    tn.save_task(tmp_path / "b.apsw", b)
    assert (tmp_path / "a.apsw").read_bytes() == (tmp_path / "b.apsw").read_bytes()
    losses = m1.get("task_loss")
    assert all(x > y for x, y in zip(losses, losses[1:]))
    assert a.frozen


def test_task_net_errors(tiny):
    with pytest.raises(InvalidArgument):
        tr.train_task_net(np.zeros((0, 8, 3)), np.zeros(0, int), "classification")
    with pytest.raises(InvalidArgument):
        tr.train_task_net(tiny.clouds, None, "classification")
    with pytest.raises(InvalidArgument):
        tr.train_task_net(tiny.clouds, None, "segmentation")


def test_sampler_training_needs_frozen_network(tiny):
    T = tn.init_classifier(4)
    with pytest.raises(InvalidState):
        tr.train_sampler_supervised(tiny.clouds, tiny.labels, T, 4, cfg64())


def test_frozen_checksum_unchanged(tiny, clf):
    before = clf.checksum()
    tr.train_sampler_joint(tiny.clouds, tiny.labels, clf, (2, 4), cfg64())
    assert clf.checksum() == before


def test_determinism_bitwise(tiny, clf):
    m1, m2 = tr.Metrics(), tr.Metrics()
    p1 = tr.train_sampler_supervised(tiny.clouds, tiny.labels, clf, 4, cfg64(), m1)
    p2 = tr.train_sampler_supervised(tiny.clouds, tiny.labels, clf, 4, cfg64(), m2)
    assert m1.rows == m2.rows
    assert p1.checksum() == p2.checksum()


def test_size_validation(tiny, clf):
    for sizes in [(), (8, 4), (4, 4), (4, 33), (0, 4)]:
        with pytest.raises(InvalidArgument):
            tr.train_sampler_joint(tiny.clouds, tiny.labels, clf, sizes, cfg64())


def test_joint_single_size_is_supervised(tiny, clf):
    cfg = cfg64(epochs=1, batch_size=64)
    a = tr.train_sampler_supervised(tiny.clouds, tiny.labels, clf, 4, cfg)
    b = tr.train_sampler_joint(tiny.clouds, tiny.labels, clf, (4,), cfg)
    assert a.checksum() == b.checksum()
    assert b.num_parameters() == apsnet.init_sampler(0).num_parameters()


def test_joint_loss_decomposes_over_prefixes(tiny, clf):
    P, y = tiny.clouds[:4].astype(np.float64), tiny.labels[:4].astype(np.int64)
    loss_cfg = geometry.LossConfig.for_task("classification")
    sizes = (2, 4, 8)
    params = apsnet.init_sampler(seed=1, dtype=np.float64)
    joint = float(tr.sampler_loss(params, clf, P, y, sizes, loss_cfg).value)
    state = {k: t.value.copy() for k, t in params.items()}
    parts = []
    for c in sizes:
        params.restore(state)   # train-mode batchnorm stats move; undo between terms
        parts.append(float(tr.sampler_loss(params, clf, P, y, (c,), loss_cfg).value))
    assert abs(joint - sum(parts)) <= 1e-9


def test_huge_lambda_drives_sampling_loss_down(tiny, clf):
    cfg = cfg64(epochs=6, loss=geometry.LossConfig(lam=1e6), lr=0.01)
    P = tiny.clouds.astype(np.float64)

    def sampling(params):
        Q = apsnet.generate(P, 4, params)
        return float(np.mean(geometry.sampling_loss(Q, P, cfg.loss)))

    untrained = sampling(apsnet.init_sampler(cfg.seed, np.float64))
    trained = sampling(tr.train_sampler_supervised(tiny.clouds, tiny.labels, clf, 4, cfg))
    assert trained <= untrained


def test_kd_takes_no_labels_and_caches_teacher(tiny, clf, monkeypatch):
    assert "labels" not in inspect.signature(tr.train_sampler_kd).parameters
    calls = []
    real = tr.kd_targets
    monkeypatch.setattr(tr, "kd_targets", lambda *a, **k: calls.append(1) or real(*a, **k))
    tr.train_sampler_kd(tiny.clouds, clf, 4, cfg64(mode="kd", epochs=3))
    assert len(calls) == 1
    t = real(tiny.clouds, clf)
    assert np.allclose(t.sum(-1), 1.0) and np.array_equal(t, real(tiny.clouds, clf))


def test_kd_reconstruction_targets_teacher_output(tiny):
    ae = tn.init_autoencoder(n_out=16, seed=0).freeze()
    t = tr.kd_targets(tiny.clouds[:3], ae)
    assert t.shape == (3, 16, 3)
    assert np.array_equal(t, tn.reconstruct(tiny.clouds[:3].astype(np.float64), ae).value)


def test_evaluate_fps_at_full_size_equals_full_cloud(tiny, clf):
    ev = tr.evaluate(tr.SamplerSpec("fps"), clf, tiny.clouds, tiny.labels, (32,))
    assert ev.rows[0][4] == tr.full_cloud_score(clf, tiny.clouds, tiny.labels)


def test_evaluate_rows_and_errors(tiny, clf):
    params = apsnet.init_sampler(0, np.float64)
    ev = tr.Metrics()
    for spec in (tr.SamplerSpec("apsnet", params), tr.SamplerSpec("apsnet", params, "m"), tr.SamplerSpec("random")):
        tr.evaluate(spec, clf, tiny.clouds, tiny.labels, (4, 8), metrics=ev)
    assert [(r[2], r[3]) for r in ev.rows] == [
        ("apsnet-g:accuracy", 4), ("apsnet-g:accuracy", 8), ("apsnet-m:accuracy", 4), ("apsnet-m:accuracy", 8),
        ("random:accuracy", 4), ("random:accuracy", 8)]
    assert all(0 <= r[4] <= 1 for r in ev.rows)
    with pytest.raises(InvalidArgument):
        tr.evaluate(tr.SamplerSpec("apsnet", params, "m"), clf, tiny.clouds, tiny.labels, (33,))
    with pytest.raises(InvalidArgument):
        tr.evaluate(tr.SamplerSpec("apsnet"), clf, tiny.clouds, tiny.labels, (4,))


def test_metrics_file_reproducible(tiny, clf, tmp_path):
    for name in ("a.csv", "b.csv"):
        ev = tr.evaluate(tr.SamplerSpec("random", seed=3), clf, tiny.clouds, tiny.labels, (4, 8))
        ev.write_csv(tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "epoch,split,metric,m,value"


def test_bench_reports_both_variants(tiny):
    params = apsnet.init_sampler(0, np.float32)
    b = tr.bench(params, tiny.clouds, (4, 16), repeats=3, warmup=1)
    g = dict((r[3], r[4]) for r in b.rows if r[2] == "apsnet-g:time_s")
    m = dict((r[3], r[4]) for r in b.rows if r[2] == "apsnet-m:time_s")
    assert set(g) == set(m) == {4, 16}
    assert all(m[k] > g[k] > 0 for k in g)


def test_checkpoints_at_decay_boundaries(tiny, clf, tmp_path):
    cfg = cfg64(epochs=4, decay_every=2, checkpoint_dir=str(tmp_path))
    tr.train_sampler_supervised(tiny.clouds, tiny.labels, clf, 4, cfg)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["sampler_epoch0002.apsw", "sampler_epoch0004.apsw"]
