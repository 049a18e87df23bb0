import csv
import json

import numpy as np
import pytest

from se_predict import harness
from se_predict.harness import ConfigError, DataCache, ExperimentConfig, StageError

FAST = (("gbdt.iterations", "60"),)


@pytest.fixture(scope="module")
def cache():
    return DataCache()


def small(**kw):
    base = dict(n_train=200, n_test=50, seed=5, hyper=FAST)
    base.update(kw)
    return ExperimentConfig(**base)


def test_smoke_run_writes_artifacts(tmp_path, cache):
    rep = harness.run_experiment(small(output_dir=str(tmp_path)), cache)
    assert np.isfinite(rep.mape) and rep.mape >= 0
    assert rep.n_eval_rows == 50
    assert rep.time_ground_truth > 0 and rep.time_preprocessing > 0 and rep.time_inference > 0
    for name in ("report.csv", "predictions.csv", "timing.csv", "model.seml", "manifest.json"):
        assert (tmp_path / name).is_file()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["mape"] == rep.mape


def test_same_seed_same_report(tmp_path):
    a = harness.run_experiment(small(output_dir=str(tmp_path / "a")))
    b = harness.run_experiment(small(output_dir=str(tmp_path / "b")))
    assert a.mape == b.mape
    assert (tmp_path / "a/report.csv").read_bytes() == (tmp_path / "b/report.csv").read_bytes()
    assert (tmp_path / "a/predictions.csv").read_bytes() == \
        (tmp_path / "b/predictions.csv").read_bytes()


def test_train_and_test_indices_are_disjoint(cache):
    train, test = cache.objects(small())
    assert len(train) == 200 and len(test) == 50
    seen = {o.H.tobytes() for o in train}
    assert not any(o.H.tobytes() in seen for o in test)


def test_user_wise_rows(cache):
    rep = harness.run_experiment(small(target="user_wise_se"), cache)
    assert rep.n_eval_rows == 200
    assert len(rep.predictions) == 200


def test_mixed_k_per_k_breakdown(cache):
    rep = harness.run_experiment(small(users=(2, 4, 8), features="poly3"), cache)
    assert set(rep.per_k) == {2, 4, 8}
    assert len(rep.rows()) == 4


@pytest.mark.parametrize("model", ["linear", "mlp"])
def test_other_families_run(cache, model):
    hyper = FAST + (("mlp.epochs", "3"), ("mlp.hidden", "16"), ("mlp.lr_grid", "0.01"),
                    ("mlp.dropout_grid", "0"), ("mlp.weight_decay_grid", "0"))
    rep = harness.run_experiment(small(model=model, hyper=hyper), cache)
    assert np.isfinite(rep.mape)


def test_irc_and_mrt_pipelines(cache):
    for prec, det in (("mrt", "mmse"), ("zf", "irc")):
        rep = harness.run_experiment(small(precoder=prec, detector=det), cache)
        assert np.isfinite(rep.mape)


def test_compare_models(tmp_path, cache):
    out = tmp_path / "cmp.csv"
    rows = harness.compare_models([small(), small(), small(model="linear")], out, cache)
    assert len(rows) == 3
    assert rows[0]["mape"] == rows[1]["mape"]
    with open(out) as fh:
        assert len(list(csv.DictReader(fh))) == 3
    with pytest.raises(ValueError):
        harness.compare_models([small()], cache=cache)
    with pytest.raises(ValueError):
        harness.compare_models([small(), small(seed=6)], cache=cache)


def test_stage_error_carries_stage(cache):
    cfg = small(hyper=(("gbdt.learning_rate", "5"),))
    with pytest.raises(StageError) as err:
        harness.run_experiment(cfg, cache)
    assert err.value.stage == "train"


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(users=(2, 4), features="sorted")
    with pytest.raises(ConfigError):
        ExperimentConfig(model="svm")
    with pytest.raises(ConfigError):
        ExperimentConfig(features="poly0")
    with pytest.raises(ConfigError):
        ExperimentConfig(target="per_layer")


def test_config_file_parsing(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# comment\nscenario = urban, rural\nusers = {2, 4, 8}\n"
                    "features = poly3\nmodel = gbdt\nn_train = 100\nsusinr = false\n"
                    "gbdt.depth = 4  # shallower\n")
    cfg = ExperimentConfig.from_file(path)
    assert cfg.scenarios == ("urban", "rural")
    assert cfg.users == (2, 4, 8)
    assert cfg.susinr is False
    assert harness.gbdt_params(cfg).depth == 4
    path.write_text("colour = blue\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(path)
    path.write_text("n_train = many\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(path)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "missing.cfg")


def test_mixed_scenarios_alternate(cache):
    cfg = small(scenarios=("urban", "rural"), n_train=20, n_test=4)
    train, _ = cache.objects(cfg)
    tags = [o.scenario_tag for o in train[:4]]
    assert tags == ["urban_analog", "rural_analog"] * 2


@pytest.fixture(scope="module")
def bench_models(cache):
    out = {}
    for users, scheme in (((8,), "sorted"), ((2, 4, 8), "poly3"), ((2, 4, 8), "sorted"),
                          ((4,), "poly3")):
        feats = "poly3" if len(users) > 1 else scheme
        cfg = small(users=users, features=feats, n_train=100, n_test=1)
        out[(users, scheme)] = harness.run_experiment(cfg, cache).model
    return out


def test_benchmark_schema(tmp_path, bench_models):
    out = tmp_path / "timing.csv"
    table = harness.run_benchmark(small(), 20, bench_models, output=out)
    by_row = {r["users"]: r for r in table}
    assert list(by_row) == ["{2}", "{4}", "{8}", "{2, 4, 8}"]
    k8 = by_row["{8}"]
    assert k8["zf_ground_truth_ms"] > 0 and k8["preprocessing_ms"] > 0
    assert k8["boosting_sorted_ms"] > 0
    mixed = by_row["{2, 4, 8}"]
    assert mixed["boosting_poly3_ms"] > 0
    assert mixed["boosting_sorted_ms"] == ""
    assert by_row["{2}"]["boosting_sorted_ms"] == ""
    with open(out) as fh:
        assert next(csv.reader(fh)) == ["users", "zf_ground_truth_ms", "preprocessing_ms",
                                        "boosting_sorted_ms", "boosting_poly3_ms"]


def test_benchmark_inference_time_is_stable(bench_models):
    runs = [harness.run_benchmark(small(), 100, bench_models, rows=((8,),))[0]
            for _ in range(2)]
    a, b = (r["boosting_sorted_ms"] for r in runs)
    assert abs(a - b) < 0.5 * max(a, b)


def test_benchmark_requires_model():
    with pytest.raises(ValueError):
        harness.run_benchmark(small(), 10, {})
