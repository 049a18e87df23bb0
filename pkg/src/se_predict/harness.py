"""
End-to-end experiment driver: generate channels, label them with the
ground-truth pipeline, featurize, train one predictor and evaluate it on a
disjoint test range of sample indices.

Experiments are described by flat ``key = value`` files::

    # exp.cfg
    scenario = urban
    users = 4
    precoder = zf
    detector = mmse
    features = sorted
    model = gbdt
    n_train = 4000
    n_test = 1000
    seed = 1
    gbdt.iterations = 1000
"""

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field, fields, asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from . import channels, features, mimo
from .features import FeatureSpec
from .models import (GbdtParams, MlpConfig, mape, save_model, train_gbdt, train_linear,
                     train_mlp)

log = logging.getLogger(__name__)

BENCH_ROWS = ((2,), (4,), (8,), (2, 4, 8))


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ExperimentConfig:
    scenarios: Tuple[str, ...] = ("urban",)
    users: Tuple[int, ...] = (4,)
    precoder: str = "zf"
    detector: str = "mmse"
    features: str = "sorted"
    susinr: bool = True
    sigma2: bool = True
    model: str = "gbdt"
    n_train: int = 4000
    n_test: int = 1000
    seed: int = 0
    target: str = "average_se"
    output_dir: Optional[str] = None
    sigma2_min: float = 1e-3
    sigma2_max: float = 1.0
    hyper: Tuple[Tuple[str, str], ...] = ()
    name: str = ""

    def __post_init__(self):
        if self.precoder.lower() not in ("zf", "mrt"):
            raise ConfigError(f"precoder must be zf or mrt, got {self.precoder!r}")
        if self.detector.lower() not in ("mmse", "irc", "mmse_irc"):
            raise ConfigError(f"detector must be mmse or irc, got {self.detector!r}")
        if self.model not in ("gbdt", "linear", "mlp"):
            raise ConfigError(f"unknown model family {self.model!r}")
        if self.target not in ("average_se", "user_wise_se"):
            raise ConfigError(f"unknown target {self.target!r}")
        if self.n_train < 10 or self.n_test < 1:
            raise ConfigError("need n_train >= 10 and n_test >= 1")
        if not self.users or min(self.users) < 1:
            raise ConfigError("users must be a nonempty list of positive integers")
        try:
            spec = self.feature_spec
        except features.FeatureSpecError as exc:
            raise ConfigError(str(exc)) from None
        if spec.fixed_k and len(set(self.users)) > 1:
            raise ConfigError(f"{spec.name} features need a single user count")
        for s in self.scenarios:
            if s not in ("urban", "rural", "iid", "urban_analog", "rural_analog"):
                raise ConfigError(f"unknown scenario {s!r}")

    @property
    def feature_spec(self) -> FeatureSpec:
        return FeatureSpec.parse(self.features, self.susinr, self.sigma2)

    @property
    def k_spec(self):
        return self.users[0] if len(self.users) == 1 else tuple(self.users)

    @property
    def label(self) -> str:
        return self.name or f"{self.model}_{self.feature_spec.name}"

    def scenario_configs(self) -> List[channels.ScenarioConfig]:
        return [channels.ScenarioConfig.from_name(
            s, seed=self.seed, noise_variance_range=(self.sigma2_min, self.sigma2_max))
            for s in self.scenarios]

    def data_key(self) -> tuple:
        """Everything that determines the channel objects of both splits."""
        return (self.scenarios, self.users, self.n_train, self.n_test, self.seed,
                self.sigma2_min, self.sigma2_max)

    def hyperparams(self, family: str) -> Dict[str, str]:
        prefix = family + "."
        return {k[len(prefix):]: v for k, v in self.hyper if k.startswith(prefix)}

    @classmethod
    def from_mapping(cls, values: Dict[str, str]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)} - {"hyper"}
        kwargs, hyper = {}, []
        for key, raw in values.items():
            key = key.strip()
            if "." in key:
                if key.split(".", 1)[0] not in ("gbdt", "linear", "mlp"):
                    raise ConfigError(f"unknown config key {key!r}")
                hyper.append((key, str(raw).strip()))
                continue
            alias = {"scenario": "scenarios", "n_tr": "n_train", "n_te": "n_test"}.get(key, key)
            if alias not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[alias] = _coerce(alias, raw)
        return cls(hyper=tuple(sorted(hyper)), **kwargs)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        values = {}
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        return cls.from_mapping(values)


def _coerce(key: str, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if key in ("scenarios",):
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if key == "users":
            return tuple(int(s) for s in raw.replace("{", "").replace("}", "").split(","))
        if key in ("n_train", "n_test", "seed"):
            return int(raw)
        if key in ("sigma2_min", "sigma2_max"):
            return float(raw)
        if key in ("susinr", "sigma2"):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def _floats(text) -> tuple:
    return tuple(float(v) for v in str(text).split(","))


def gbdt_params(cfg: ExperimentConfig) -> GbdtParams:
    hp = cfg.hyperparams("gbdt")
    kinds = {f.name: f.type for f in fields(GbdtParams)}
    try:
        kwargs = {k: (int(v) if kinds[k] in (int, "int") else float(v)) for k, v in hp.items()}
    except KeyError as exc:
        raise ConfigError(f"unknown gbdt hyperparameter {exc}") from None
    return GbdtParams(**kwargs)


def mlp_config(cfg: ExperimentConfig) -> MlpConfig:
    hp = cfg.hyperparams("mlp")
    kwargs = {"seed": cfg.seed}
    for k, v in hp.items():
        if k == "hidden":
            kwargs[k] = tuple(int(x) for x in v.split(","))
        elif k in ("epochs", "batch_size"):
            kwargs[k] = int(v)
        elif k in ("momentum", "val_fraction"):
            kwargs[k] = float(v)
        elif k in ("lr_grid", "dropout_grid", "weight_decay_grid"):
            kwargs[k] = _floats(v)
        else:
            raise ConfigError(f"unknown mlp hyperparameter {k!r}")
    return MlpConfig(**kwargs)


def train_model(cfg: ExperimentConfig, X, y):
    if cfg.model == "gbdt":
        return train_gbdt(X, y, gbdt_params(cfg))
    if cfg.model == "linear":
        folds = int(cfg.hyperparams("linear").get("folds", 5))
        return train_linear(X, y, folds=folds, seed=cfg.seed)
    return train_mlp(X, y, mlp_config(cfg))


# --- data -----------------------------------------------------------------

@dataclass
class LabeledSplit:
    objects: list
    reports: list = field(default_factory=list)
    gt_seconds: np.ndarray = None

    @property
    def user_counts(self) -> np.ndarray:
        return np.array([o.K for o in self.objects])


def generate_split(cfg: ExperimentConfig, start: int, n: int) -> list:
    """Objects with sample indices ``start .. start+n-1``; with several
    scenarios, index ``i`` uses scenario ``i mod len(scenarios)``."""
    scen = cfg.scenario_configs()
    out = []
    for index in range(start, start + n):
        sc = scen[index % len(scen)]
        K = channels.user_count(sc, cfg.k_spec, index)
        out.append(channels.generate_channel(sc, K, index))
    return out


def label_split(objects, precoder: str, detector: str) -> LabeledSplit:
    reports, times = [], np.empty(len(objects))
    for i, obj in enumerate(objects):
        t0 = time.perf_counter()
        reports.append(mimo.label_object(obj, precoder, detector))
        times[i] = time.perf_counter() - t0
    return LabeledSplit(list(objects), reports, times)


def targets(split: LabeledSplit, mode: str) -> np.ndarray:
    if mode == "average_se":
        return np.array([r.se_avg for r in split.reports])
    return np.concatenate([r.se_user for r in split.reports])


def featurize_split(split: LabeledSplit, spec: FeatureSpec, mode: str):
    """Feature matrix and total featurization time in seconds."""
    t0 = time.perf_counter()
    if mode == "average_se":
        X = features.featurize(split.objects, spec)
    else:
        X = features.featurize_users(split.objects, spec)
    return X, time.perf_counter() - t0


class DataCache:
    """Channel objects and labels shared between experiments on the same data."""

    def __init__(self):
        self._objects = {}
        self._labels = {}

    def objects(self, cfg: ExperimentConfig):
        key = cfg.data_key()
        if key not in self._objects:
            self._objects[key] = (generate_split(cfg, 0, cfg.n_train),
                                  generate_split(cfg, cfg.n_train, cfg.n_test))
        return self._objects[key]

    def labeled(self, cfg: ExperimentConfig):
        key = (cfg.data_key(), cfg.precoder.lower(), cfg.detector.lower())
        if key not in self._labels:
            train, test = self.objects(cfg)
            self._labels[key] = (label_split(train, cfg.precoder, cfg.detector),
                                 label_split(test, cfg.precoder, cfg.detector))
        return self._labels[key]


# --- experiments ----------------------------------------------------------

@dataclass
class EvalReport:
    config: ExperimentConfig
    mape: float
    per_k: Dict[int, float]
    n_eval_rows: int
    time_ground_truth: float
    time_preprocessing: float
    time_inference: float
    predictions: np.ndarray = None
    targets: np.ndarray = None
    model: object = None

    def rows(self) -> List[dict]:
        base = {"name": self.config.label, "model": self.config.model,
                "features": self.config.feature_spec.name,
                "precoder": self.config.precoder, "detector": self.config.detector,
                "target": self.config.target}
        out = [dict(base, users="all", n=self.n_eval_rows, mape=repr(self.mape))]
        if len(self.per_k) > 1:
            for K, value in sorted(self.per_k.items()):
                out.append(dict(base, users=K, n="", mape=repr(value)))
        return out


def _run(cfg: ExperimentConfig, cache: DataCache) -> EvalReport:
    stage = "generate"
    try:
        cache.objects(cfg)
        stage = "label"
        train, test = cache.labeled(cfg)
        stage = "featurize"
        spec = cfg.feature_spec
        Xtr, _ = featurize_split(train, spec, cfg.target)
        Xte, prep_s = featurize_split(test, spec, cfg.target)
        ytr, yte = targets(train, cfg.target), targets(test, cfg.target)
        stage = "train"
        model = train_model(cfg, Xtr, ytr)
        stage = "evaluate"
        t0 = time.perf_counter()
        pred = model.predict(Xte)
        infer_s = time.perf_counter() - t0
        score = mape(pred, yte)
    except Exception as exc:
        raise StageError(stage, exc) from exc

    ks = test.user_counts
    if cfg.target == "user_wise_se":
        ks = np.repeat(ks, ks)
    per_k = {int(K): mape(pred[ks == K], yte[ks == K]) for K in np.unique(ks)}
    n_obj = len(test.objects)
    return EvalReport(cfg, score, per_k, len(yte), float(np.mean(test.gt_seconds)),
                      prep_s / n_obj, infer_s / n_obj, pred, yte, model)


def write_outputs(report: EvalReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "report.csv", report.rows())
    write_csv(out / "predictions.csv",
              [{"target": repr(float(t)), "prediction": repr(float(p))}
               for t, p in zip(report.targets, report.predictions)])
    write_csv(out / "timing.csv", [{
        "ground_truth_ms": report.time_ground_truth * 1e3,
        "preprocessing_ms": report.time_preprocessing * 1e3,
        "inference_ms": report.time_inference * 1e3}])
    save_model(report.model, out / "model.seml")
    manifest = {"config": _jsonable(asdict(report.config)), "mape": report.mape,
                "artifacts": ["report.csv", "predictions.csv", "timing.csv", "model.seml"]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, (tuple, list)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    return obj


def run_experiment(cfg: ExperimentConfig, cache: DataCache = None) -> EvalReport:
    """Generate, label, featurize, train and evaluate one configuration.

    Outputs go to ``cfg.output_dir`` when set. ``report.csv`` holds only
    deterministic quantities; wall-clock figures go to ``timing.csv``.
    """
    report = _run(cfg, cache or DataCache())
    log.info("%s: MAPE %.4f", cfg.label, report.mape)
    if cfg.output_dir:
        write_outputs(report, cfg.output_dir)
    return report


def compare_models(configs: Sequence[ExperimentConfig], output=None,
                   cache: DataCache = None) -> List[dict]:
    """Evaluate several configurations on one shared data split."""
    configs = list(configs)
    if len(configs) < 2:
        raise ValueError("compare_models needs at least two configurations")
    if len({c.data_key() for c in configs}) != 1:
        raise ValueError("configurations do not share the same train/test data")
    cache = cache or DataCache()
    rows = []
    for cfg in configs:
        rep = run_experiment(cfg, cache)
        rows.append({"name": cfg.label, "model": cfg.model, "features": cfg.feature_spec.name,
                     "precoder": cfg.precoder, "detector": cfg.detector,
                     "target": cfg.target, "mape": repr(rep.mape)})
    if output:
        write_csv(output, rows)
    return rows


# --- timing ---------------------------------------------------------------

def _median_ms(fn, items) -> float:
    times = np.empty(len(items))
    for i, item in enumerate(items):
        t0 = time.perf_counter_ns()
        fn(item)
        times[i] = time.perf_counter_ns() - t0
    return float(np.median(times) / 1e6)


def row_label(users: Sequence[int]) -> str:
    return "{" + ", ".join(str(k) for k in users) + "}"


def run_benchmark(cfg: ExperimentConfig, repetitions: int = 100, models: dict = None,
                  rows: Sequence[Tuple[int, ...]] = BENCH_ROWS, output=None) -> List[dict]:
    """Median per-object times (ms) for ZF ground truth, the shared
    preprocessing, and boosted-tree inference on sorted and poly3 features.

    ``models`` maps ``(users_tuple, scheme)`` to a trained model, e.g.
    ``{((8,), 'sorted'): m1, ((2, 4, 8), 'poly3'): m2}``. A cell is left empty
    when no model is given for it; sorted features never apply to mixed K.
    """
    if not models:
        raise ValueError("run_benchmark needs at least one trained model")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    table = []
    with threadpool_limits(1):
        for users in rows:
            bench_cfg = replace(cfg, users=tuple(users), features="poly3")
            objs = generate_split(bench_cfg, 10**9, repetitions)
            for obj in objs[:3]:  # warm caches and lazy imports
                mimo.label_object(obj, "zf", "mmse")
            row = {"users": row_label(users),
                   "zf_ground_truth_ms": _median_ms(lambda o: mimo.label_object(o, "zf", "mmse"),
                                                    objs),
                   "preprocessing_ms": _median_ms(features.extract_raw, objs)}
            raws = [features.extract_raw(o) for o in objs]
            for scheme in ("sorted", "poly3"):
                model = models.get((tuple(users), scheme))
                key = f"boosting_{scheme}_ms"
                if model is None or (scheme == "sorted" and len(users) > 1):
                    row[key] = ""
                    continue
                spec = FeatureSpec.parse(scheme, cfg.susinr, cfg.sigma2)

                def infer(raw, model=model, spec=spec):
                    return model.predict(features.assemble_raw(raw, spec)[None, :])

                infer(raws[0])
                row[key] = _median_ms(infer, raws)
            table.append(row)
    if output:
        write_csv(output, table)
    return table


def write_csv(path, rows: List[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    path.write_text(buf.getvalue())
