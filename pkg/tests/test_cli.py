import csv
import subprocess
import sys
from collections import Counter

import pytest

from ptsample import apsnet, data
from ptsample.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("gen-data", "--out", d / "d.apsb", "--per-class", 8, "--n", 32, "--fractions", "0.5,0,0.5",
               "--seed", 1) == 0
    assert run("train-task", "--data", d / "d.apsb", "--out", d / "t.apsw", "--epochs", 3, "--batch-size", 8) == 0
    return d


def rows(path):
    return list(csv.DictReader(open(path)))


def test_usage_errors_exit_2(capsys):
    assert run() == 2
    assert run("gen-data") == 2
    assert run("sample", "--data", "x", "--out", "y", "--m", 4, "--bogus") == 2
    assert run("train-sampler", "--data", "x", "--task-net", "t", "--out", "o", "--mode", "teacher") == 2
    assert "usage:" in capsys.readouterr().err


def test_help_exits_0():
    assert run("--help") == 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ptsample", "eval", "--data", tmp_path / "none.apsb",
                           "--task-net", tmp_path / "none.apsw", "--metrics", tmp_path / "m.csv"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert "none.apsw" in proc.stderr


def test_fps_sample_twice_identical(work):
    for name in ("s1.apsb", "s2.apsb"):
        assert run("sample", "--data", work / "d.apsb", "--out", work / name, "--method", "fps", "--m", 8,
                   "--fps-start", 0) == 0
    assert (work / "s1.apsb").read_bytes() == (work / "s2.apsb").read_bytes()
    assert data.load_dataset(work / "s1.apsb").clouds.shape == (32, 8, 3)


def test_eval_missing_checkpoint_exit_1(work, capsys):
    missing = work / "no_such_sampler.apsw"
    assert run("eval", "--data", work / "d.apsb", "--task-net", work / "t.apsw", "--sampler", missing,
               "--metrics", work / "m.csv") == 1
    assert str(missing) in capsys.readouterr().err


def test_runtime_errors_exit_1(work):
    assert run("sample", "--data", work / "d.apsb", "--out", work / "x.apsb", "--method", "apsnet", "--m", 4) == 1
    assert run("train-sampler", "--data", work / "d.apsb", "--task-net", work / "t.apsw", "--out", work / "x",
               "--m", 99, "--epochs", 1) == 1
    (work / "bad.apsb").write_bytes(b"nope")
    assert run("sample", "--data", work / "bad.apsb", "--out", work / "x.apsb", "--m", 4) == 1


def test_end_to_end_pipeline(work):
    assert run("train-sampler", "--data", work / "d.apsb", "--task-net", work / "t.apsw", "--out", work / "s.apsw",
               "--m", 8, "--epochs", 2, "--batch-size", 8, "--metrics", work / "train.csv") == 0
    assert rows(work / "train.csv")[0].keys() == {"epoch", "split", "metric", "m", "value"}
    assert run("eval", "--data", work / "d.apsb", "--task-net", work / "t.apsw", "--sampler", work / "s.apsw",
               "--methods", "apsnet,fps,random,voxel", "--sizes", "4,8", "--metrics", work / "ev.csv",
               "--summary", work / "ev.json") == 0
    got = Counter((r["metric"], r["m"]) for r in rows(work / "ev.csv") if r["epoch"] == "-1")
    methods = ("apsnet-g", "apsnet-m", "fps", "random", "voxel")
    assert got == Counter({(f"{mt}:accuracy", m): 1 for mt in methods for m in ("4", "8")}
                          | {("full:accuracy", "32"): 1})
    assert (work / "ev.json").exists()

    assert run("dump-attention", "--data", work / "d.apsb", "--sampler", work / "s.apsw", "--m", 3,
               "--out", work / "att.csv") == 0
    assert len(rows(work / "att.csv")) == 3 * 32
    assert run("bench", "--data", work / "d.apsb", "--sampler", work / "s.apsw", "--sizes", 4, "--repeats", 2,
               "--warmup", 0, "--metrics", work / "b.csv") == 0
    assert {r["metric"] for r in rows(work / "b.csv")} == {"apsnet-g:time_s", "apsnet-m:time_s"}


def test_seeded_training_reproducible(work):
    for name in ("r1.apsw", "r2.apsw"):
        assert run("train-sampler", "--data", work / "d.apsb", "--task-net", work / "t.apsw", "--out", work / name,
                   "--m", 4, "--epochs", 1, "--batch-size", 8, "--seed", 3) == 0
    assert (work / "r1.apsw").read_bytes() == (work / "r2.apsw").read_bytes()


def test_config_file_and_precedence(work, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sampler settings\nm = 4\nepochs = 1\nbatch_size = 8\nlambda = 5\n")
    out = tmp_path / "c.apsw"
    assert run("train-sampler", "--config", cfg, "--data", work / "d.apsb", "--task-net", work / "t.apsw",
               "--out", out, "--m", 6) == 0
    # --m 6 on the command line beats m = 4 from the file
    ref = tmp_path / "ref.apsw"
    assert run("train-sampler", "--data", work / "d.apsb", "--task-net", work / "t.apsw", "--out", ref,
               "--m", 6, "--epochs", 1, "--batch-size", 8, "--lambda", 5) == 0
    assert out.read_bytes() == ref.read_bytes()
    cfg.write_text("unknown_key = 1\n")
    assert run("train-sampler", "--config", cfg, "--data", "x", "--task-net", "t", "--out", "o") == 2


def test_kd_on_unlabeled_data(work, tmp_path):
    ds = data.load_dataset(work / "d.apsb").unlabeled()
    data.save_dataset(tmp_path / "u.apsb", ds)
    base = ("train-sampler", "--data", tmp_path / "u.apsb", "--task-net", work / "t.apsw", "--m", 4,
            "--epochs", 1, "--batch-size", 8)
    assert run(*base, "--out", tmp_path / "kd.apsw", "--mode", "kd") == 0
    assert apsnet.load_sampler(tmp_path / "kd.apsw").num_parameters() > 0
    assert run(*base, "--out", tmp_path / "sup.apsw") == 1
    assert run(*base, "--out", tmp_path / "joint.apsw", "--mode", "joint", "--sizes", "2,4") == 1
