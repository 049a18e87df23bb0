"""Command-line entry point: ``se-predict <command> ...``.

Exit codes: 0 success, 2 bad configuration or arguments, 3 data/I-O errors,
4 numerical failures. ``SE_PREDICT_THREADS`` caps BLAS/OpenMP threads.
"""

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import channels, features, harness, mimo
from ._container import ContainerError
from .models import (GbdtParams, MlpConfig, load_model, mape, save_model, train_gbdt,
                     train_linear, train_mlp)

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
THREADS_ENV = "SE_PREDICT_THREADS"

log = logging.getLogger("se_predict")


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContainerError(f"{path} is empty")
    return rows[0], rows[1:]


def _read_numeric_csv(path):
    header, rows = _read_csv(path)
    return header, np.array([[float(v) for v in row] for row in rows], dtype=float)


def cmd_gen(args):
    cfg = channels.ScenarioConfig.from_name(args.scenario, seed=args.seed)
    users = [int(u) for u in args.users.split(",")]
    objects = channels.generate_dataset(cfg, args.n, users[0] if len(users) == 1 else users,
                                        start=args.start)
    channels.save_dataset(objects, args.out)
    log.info("wrote %d objects to %s", len(objects), args.out)


def cmd_label(args):
    objects = channels.load_dataset(args.inp)
    rows = []
    for i, obj in enumerate(objects):
        t0 = time.perf_counter()
        rep = mimo.label_object(obj, args.precoder, args.detector)
        elapsed = time.perf_counter() - t0
        rows.append({"index": i, "K": obj.K, "se_avg": repr(rep.se_avg),
                     "se_user": ";".join(repr(float(v)) for v in rep.se_user),
                     "susinr": repr(rep.susinr), "sigma2": repr(rep.sigma2),
                     "time_ms": f"{elapsed * 1e3:.4f}"})
    harness.write_csv(args.out, rows)
    log.info("labeled %d objects -> %s", len(rows), args.out)


def cmd_featurize(args):
    objects = channels.load_dataset(args.inp)
    spec = features.FeatureSpec.parse(args.scheme, args.susinr, args.sigma2)
    header, rows = _read_csv(args.labels)
    col = {name: i for i, name in enumerate(header)}
    if len(rows) != len(objects):
        raise ContainerError("labels and channel file disagree on the number of objects")
    if args.user_wise:
        X = features.featurize_users(objects, spec)
        y = np.concatenate([[float(v) for v in r[col["se_user"]].split(";")] for r in rows])
        names = [f"f{i}" for i in range(X.shape[1])]
    else:
        X = features.featurize(objects, spec)
        y = np.array([float(r[col["se_avg"]]) for r in rows])
        names = features.feature_names(spec, objects[0].K if spec.fixed_k else None,
                                       objects[0].layers_per_user)
    out_rows = [dict(zip(names + ["target"], map(repr, map(float, list(x) + [t]))))
                for x, t in zip(X, y)]
    harness.write_csv(args.out, out_rows)


def _build_model(args, X, y):
    if args.model == "gbdt":
        params = GbdtParams(seed=args.seed)
        overrides = {k: v for k, v in (("iterations", args.iterations), ("depth", args.depth),
                                       ("learning_rate", args.learning_rate)) if v is not None}
        return train_gbdt(X, y, params, **overrides)
    if args.model == "linear":
        return train_linear(X, y, folds=args.folds, seed=args.seed)
    cfg = MlpConfig(seed=args.seed)
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.hidden:
        cfg.hidden = tuple(int(h) for h in args.hidden.split(","))
    return train_mlp(X, y, cfg)


def cmd_train(args):
    header, data = _read_numeric_csv(args.feats)
    if header[-1] != "target":
        raise ContainerError("last column of the feature file must be 'target'")
    model = _build_model(args, data[:, :-1], data[:, -1])
    save_model(model, args.out)
    log.info("trained %s on %d rows -> %s", args.model, len(data), args.out)


def cmd_eval(args):
    model = load_model(args.model)
    header, data = _read_numeric_csv(args.feats)
    X, y = data[:, :-1], data[:, -1]
    t0 = time.perf_counter()
    pred = model.predict(X)
    elapsed = time.perf_counter() - t0
    score = mape(pred, y)
    rows = [{"target": repr(float(t)), "prediction": repr(float(p)),
             "abs_pct_error": repr(float(abs(t - p) / abs(t)))} for t, p in zip(y, pred)]
    harness.write_csv(args.report, rows)
    print(f"MAPE {score:.6f} on {len(y)} rows ({elapsed / len(y) * 1e3:.4f} ms/row)")


def cmd_run(args):
    cfg = harness.ExperimentConfig.from_file(args.config)
    if args.out:
        cfg = harness.replace(cfg, output_dir=args.out)
    rep = harness.run_experiment(cfg)
    print(f"MAPE {rep.mape:.6f}")
    for K, value in sorted(rep.per_k.items()):
        if len(rep.per_k) > 1:
            print(f"  K={K}: {value:.6f}")


def cmd_bench(args):
    cfg = harness.ExperimentConfig.from_file(args.config) if args.config else \
        harness.ExperimentConfig()
    models = {}
    for path in sorted(Path(args.model_dir).glob("*.seml")):
        # file names: <scheme>_K<users joined by '-'>.seml, e.g. sorted_K8.seml
        stem = path.stem
        try:
            scheme, users = stem.rsplit("_K", 1)
            key = (tuple(int(u) for u in users.split("-")), scheme)
        except ValueError:
            log.warning("ignoring %s (expected <scheme>_K<users>.seml)", path.name)
            continue
        models[key] = load_model(path, "gbdt")
    table = harness.run_benchmark(cfg, args.repetitions, models, output=args.out)
    for row in table:
        print(row)


def cmd_compare(args):
    cfgs = [harness.ExperimentConfig.from_file(p) for p in args.configs]
    for row in harness.compare_models(cfgs, args.out):
        print(row)


def build_parser():
    p = argparse.ArgumentParser(prog="se-predict", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a channel dataset")
    g.add_argument("--scenario", choices=["urban", "rural", "iid"], default="urban")
    g.add_argument("--users", default="4", help="K or comma-separated set of K")
    g.add_argument("--n", type=int, default=16000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--start", type=int, default=0, help="first sample index")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    lb = sub.add_parser("label", help="compute ground-truth SE for a dataset")
    lb.add_argument("--in", dest="inp", required=True)
    lb.add_argument("--precoder", choices=["zf", "mrt"], default="zf")
    lb.add_argument("--detector", choices=["mmse", "irc"], default="mmse")
    lb.add_argument("--out", required=True)
    lb.set_defaults(func=cmd_label)

    f = sub.add_parser("featurize", help="write a numeric feature CSV")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--labels", required=True)
    f.add_argument("--scheme", default="sorted", help="default | sorted | poly<k>")
    f.add_argument("--susinr", action="store_true")
    f.add_argument("--sigma2", action="store_true")
    f.add_argument("--user-wise", action="store_true")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_featurize)

    t = sub.add_parser("train", help="train a predictor on a feature CSV")
    t.add_argument("--feats", required=True)
    t.add_argument("--model", choices=["gbdt", "linear", "mlp"], default="gbdt")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--iterations", type=int)
    t.add_argument("--depth", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--folds", type=int, default=5)
    t.add_argument("--epochs", type=int)
    t.add_argument("--hidden", help="hidden widths, e.g. 200 or 200,200,200")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a model on a feature CSV")
    e.add_argument("--model", required=True)
    e.add_argument("--feats", required=True)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("run", help="run an experiment from a key=value config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="override output_dir")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="per-object timing table")
    b.add_argument("--config")
    b.add_argument("--model-dir", required=True)
    b.add_argument("--repetitions", type=int, default=100)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("compare", help="compare several configs on shared data")
    c.add_argument("configs", nargs="+")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, harness.StageError):
        exc = exc.cause
    if isinstance(exc, (harness.ConfigError, features.FeatureSpecError)):
        return EXIT_CONFIG
    if isinstance(exc, (np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (ContainerError, OSError, channels.ChannelGenerationError,
                        KeyError, ValueError, TypeError)):
        return EXIT_DATA
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get(THREADS_ENV)
    try:
        limit = int(threads) if threads else None
    except ValueError:
        print(f"error: {THREADS_ENV} must be an integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(limit):
            args.func(args)
    except Exception as exc:  # mapped to documented exit codes
        code = _exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
