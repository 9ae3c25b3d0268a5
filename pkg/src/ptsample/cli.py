"""Command-line entry point: ``ptsample <subcommand> ...``.

Settings resolve as command-line flag, then ``key=value`` lines from
``--config FILE``, then built-in defaults. Exit status is 0 on success,
2 on a usage error and 1 when the command itself fails.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import apsnet, data, geometry, tasknets, training
from .errors import FormatError, InvalidArgument, InvalidState

log = logging.getLogger("ptsample")


class UsageError(Exception):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v for v in str(text).replace(" ", "").split(",") if v)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; flags given on the command line win")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="ptsample", description="Task-driven point-cloud sampling.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic shape dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--families", type=_str_list, default=("sphere", "cube", "cylinder", "cone"))
    g.add_argument("--per-class", type=int, default=100)
    g.add_argument("--n", type=int, default=512)
    g.add_argument("--jitter", type=float, default=0.02)
    g.add_argument("--scale-jitter", type=float, default=0.0)
    g.add_argument("--rotate-z", action="store_true")
    g.add_argument("--fractions", type=_float_list, default=(0.85, 0.05, 0.10))

    t = sub.add_parser("train-task", parents=[common], help="pre-train and freeze a task network")
    t.add_argument("--data", required=True)
    t.add_argument("--task", choices=("classification", "reconstruction"), default="classification")
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--n-out", type=int, default=512)
    t.add_argument("--metrics")

    s = sub.add_parser("train-sampler", parents=[common], help="train the attention sampler")
    s.add_argument("--data", required=True)
    s.add_argument("--task-net", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--task", choices=("classification", "reconstruction"), default=None,
                   help="defaults to the task network's kind")
    s.add_argument("--mode", choices=("supervised", "kd", "joint"), default="supervised")
    s.add_argument("--m", type=int, default=32)
    s.add_argument("--sizes", type=_int_list, default=training.DEFAULT_SIZES)
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--delta", type=float, default=0.0)
    s.add_argument("--epochs", type=int, default=400)
    s.add_argument("--batch-size", type=int, default=128)
    s.add_argument("--lr", type=float, default=None)
    s.add_argument("--clip-norm", type=float, default=5.0, help="0 disables clipping")
    s.add_argument("--checkpoint-dir")
    s.add_argument("--metrics")

    sm = sub.add_parser("sample", parents=[common], help="sample every cloud of a dataset")
    sm.add_argument("--data", required=True)
    sm.add_argument("--out", required=True)
    sm.add_argument("--m", type=int, required=True)
    sm.add_argument("--method", choices=training.METHODS, default="fps")
    sm.add_argument("--variant", choices=("g", "m"), default="g")
    sm.add_argument("--sampler", help="sampler checkpoint (method apsnet)")
    sm.add_argument("--fps-start", type=int, default=0)
    sm.add_argument("--voxel-cell", type=float, default=0.5)

    e = sub.add_parser("eval", parents=[common], help="score samplers with a frozen task network")
    e.add_argument("--data", required=True)
    e.add_argument("--task-net", required=True)
    e.add_argument("--sampler", help="sampler checkpoint; required for method apsnet")
    e.add_argument("--methods", type=_str_list, default=("apsnet", "fps", "random"))
    e.add_argument("--variant", choices=("g", "m", "both"), default="both")
    e.add_argument("--sizes", type=_int_list, default=(8, 16, 32, 64))
    e.add_argument("--split", choices=data.SPLITS + ("all",), default="test")
    e.add_argument("--fps-start", type=int, default=0)
    e.add_argument("--voxel-cell", type=float, default=0.5)
    e.add_argument("--metrics", required=True)
    e.add_argument("--summary")

    b = sub.add_parser("bench", parents=[common], help="time generate-only and matched sampling")
    b.add_argument("--data", required=True)
    b.add_argument("--sampler", required=True)
    b.add_argument("--sizes", type=_int_list, default=(32, 128))
    b.add_argument("--repeats", type=int, default=20)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--metrics", required=True)

    d = sub.add_parser("dump-attention", parents=[common], help="write one cloud's attention trace")
    d.add_argument("--data", required=True)
    d.add_argument("--sampler", required=True)
    d.add_argument("--index", type=int, default=0)
    d.add_argument("--m", type=int, required=True)
    d.add_argument("--out", required=True)
    return p


def read_config(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        k = k.strip().replace("-", "_")
        out["lam" if k == "lambda" else k] = v.strip()
    return out


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    path = _config_path(argv)
    command = next((tok for tok in argv if tok in COMMANDS), None)
    if path is None or command is None:
        return parser.parse_args(argv)
    values = read_config(path)
    subparser = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for k, v in values.items():
        if k not in actions or k in ("config", "help"):
            raise UsageError(f"{path}: unknown setting {k!r} for {command}")
        a = actions[k]
        if isinstance(a, argparse._StoreTrueAction):
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
            continue
        try:
            val = a.type(v) if a.type else v
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"{path}: bad value for {k}: {exc}") from None
        if a.choices is not None and val not in a.choices:
            raise UsageError(f"{path}: {k} must be one of {list(a.choices)}")
        defaults[k] = val
        a.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _load(args) -> data.Dataset:
    return data.load_dataset(args.data)


def _split(ds: data.Dataset, split: str) -> data.Dataset:
    return ds if split == "all" else ds.subset(split)


def cmd_gen_data(args) -> None:
    ds = data.generate_synthetic(args.families, args.per_class, args.n, args.seed, args.jitter,
                                 args.fractions, args.scale_jitter, args.rotate_z)
    data.save_dataset(args.out, ds)
    log.info("wrote %d clouds to %s", len(ds), args.out)


def cmd_train_task(args) -> None:
    tr = _load(args).subset("train")
    if len(tr) == 0:
        raise InvalidArgument(f"{args.data} has no training split")
    cfg = training.TaskTrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
                                   n_out=args.n_out, dtype=args.dtype)
    metrics = training.Metrics()
    labels = tr.labels if args.task == "classification" else None
    k = len(tr.class_names) or None
    T = training.train_task_net(tr.clouds, labels, args.task, cfg, num_classes=k, metrics=metrics)
    tasknets.save_task(args.out, T)
    if args.metrics:
        metrics.write_csv(args.metrics)


def cmd_train_sampler(args) -> None:
    T = tasknets.load_task(args.task_net, np.dtype(args.dtype))
    task = args.task or T.kind
    if task != T.kind:
        raise InvalidArgument(f"--task {task} does not match the {T.kind} network in {args.task_net}")
    base = geometry.LossConfig.for_task(task)
    loss = geometry.LossConfig(beta=args.beta, gamma=args.gamma, delta=args.delta,
                               lam=base.lam if args.lam is None else args.lam)
    cfg = training.TrainConfig(task=task, mode=args.mode, m=args.m, sizes=args.sizes, epochs=args.epochs,
                               batch_size=args.batch_size, lr=args.lr, loss=loss, seed=args.seed,
                               clip_norm=args.clip_norm or None, dtype=args.dtype,
                               checkpoint_dir=args.checkpoint_dir)
    tr = _load(args).subset("train")
    metrics = training.Metrics()
    if args.mode != "kd" and task == "classification" and np.any(tr.labels < 0):
        raise InvalidArgument(f"--mode {args.mode} needs labels for classification; use --mode kd")
    if args.mode == "kd":
        params = training.train_sampler_kd(tr.clouds, T, args.m, cfg, metrics)
    elif args.mode == "joint":
        params = training.train_sampler_joint(tr.clouds, tr.labels, T, args.sizes, cfg, metrics)
    else:
        params = training.train_sampler_supervised(tr.clouds, tr.labels, T, args.m, cfg, metrics)
    apsnet.save_sampler(args.out, params)
    if args.metrics:
        metrics.write_csv(args.metrics)


def _spec(args, method: str, variant: str = "g") -> training.SamplerSpec:
    params = None
    if method == "apsnet":
        if not args.sampler:
            raise InvalidArgument("method apsnet needs --sampler")
        params = apsnet.load_sampler(args.sampler, np.dtype(args.dtype))
    elif method not in training.METHODS:
        raise InvalidArgument(f"unknown method {method!r}; choose from {training.METHODS}")
    return training.SamplerSpec(method, params, variant, args.fps_start, args.seed,
                                getattr(args, "voxel_cell", 0.5))


def cmd_sample(args) -> None:
    ds = _load(args)
    S = training.sample_stack(_spec(args, args.method, args.variant), ds.clouds, args.m)
    data.save_dataset(args.out, data.Dataset(S, ds.labels, ds.class_names, ds.split))


def cmd_eval(args) -> None:
    T = tasknets.load_task(args.task_net, np.dtype(args.dtype))
    specs = []
    for method in args.methods:
        if method == "apsnet":
            variants = ("g", "m") if args.variant == "both" else (args.variant,)
            specs.extend(_spec(args, method, v) for v in variants)
        else:
            specs.append(_spec(args, method))
    ev = _split(_load(args), args.split)
    if len(ev) == 0:
        raise InvalidArgument(f"{args.data} has no {args.split} split")
    metrics = training.Metrics()
    metrics.add(-1, args.split, "full:" + ("accuracy" if T.kind == "classification" else "nre"), ev.n,
                training.full_cloud_score(T, ev.clouds, ev.labels))
    for spec in specs:
        training.evaluate(spec, T, ev.clouds, ev.labels, args.sizes, args.split, metrics)
    metrics.write_csv(args.metrics)
    if args.summary:
        training.write_summary(args.summary, metrics, {"task_net": str(args.task_net)})


def cmd_bench(args) -> None:
    params = apsnet.load_sampler(args.sampler, np.dtype(args.dtype))
    ds = _load(args)
    metrics = training.bench(params, ds.clouds, args.sizes, args.repeats, args.warmup)
    metrics.write_csv(args.metrics)
    for row in metrics.rows:
        print(f"{row[2]} m={row[3]} median={row[4] * 1e3:.3f} ms")


def cmd_dump_attention(args) -> None:
    params = apsnet.load_sampler(args.sampler, np.dtype(args.dtype))
    ds = _load(args)
    if not 0 <= args.index < len(ds):
        raise InvalidArgument(f"--index {args.index} outside [0, {len(ds)})")
    _, trace = apsnet.sample(ds.clouds[args.index], args.m, params)
    apsnet.write_attention_csv(args.out, trace)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-task": cmd_train_task,
    "train-sampler": cmd_train_sampler,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "dump-attention": cmd_dump_attention,
}


def _thread_limit():
    raw = os.environ.get("PTSAMPLE_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"PTSAMPLE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"PTSAMPLE_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        limiter = _thread_limit()
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except FileNotFoundError as exc:
        print(f"ptsample: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (InvalidArgument, InvalidState, FormatError, FileNotFoundError, OSError) as exc:
        print(f"ptsample {args.command}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    return 0


if __name__ == "__main__":
    sys.exit(main())
