import copy
import json
import os
import subprocess
import sys

import numpy as np
import pytest
import yaml

from fedmeta.data import SyntheticSpec, gen_synthetic, split
from fedmeta.errors import ConfigError
from fedmeta.harness import config as hc
from fedmeta.harness.baselines import baseline_direct, baseline_episode_accuracy, knn_accuracy
from fedmeta.harness.gradcheck import format_results, run_gradcheck
from fedmeta.harness.report import comparison_table, load_report, recomputed_means, write_curves
from fedmeta.harness.runner import run_experiment
from fedmeta.harness.variants import ALL_VARIANTS, effective_meta, plan_variant
from fedmeta.losses import FocalParams
from fedmeta.metalearn import MetaConfig, sample_episode
from fedmeta.seeds import derive_rng

TINY = {
    "dataset": {"kind": "synthetic", "classes": 7, "dim": 6,
                "sizes": [30, 30, 30, 30, 30, 20, 18],
                "spread": 1.0, "separation": 3.0, "seed": 42},
    "split": {"common": [1, 2, 3, 4, 5], "rare": [6, 7],
              "hospitals": 2, "classes_per_hospital": 3},
    "model": {"encoder_dims": [8], "use_bn": True, "head_dims": []},
    "meta": {"alpha": 0.05, "beta": 0.01, "k_shot": 3,
             "tasks_per_episode": 2, "adapt_steps": 2, "finetune_steps": 2},
    "fusion": {"eval_episodes": 4, "eval_seed": 7},
    "run": {"variant": "DWA_FML", "rounds": 2, "local_episodes": 1,
            "seeds": [0, 1], "report_episodes": 4,
            "finetune_curve_steps": [1, 3], "trace_points": 2},
}


def tiny_config(**run_overrides):
    raw = copy.deepcopy(TINY)
    raw["run"].update(run_overrides)
    return hc.from_dict(raw)


# ---------------------------------------------------------------- config


def test_default_config_mirrors_protocol():
    cfg = hc.ExperimentConfig()
    assert cfg.meta.focal == FocalParams(5.0, 2.0)
    assert cfg.meta.phi == 2.0
    assert cfg.meta.tasks_per_episode == 10
    assert cfg.meta.adapt_steps == 5
    assert cfg.meta.q_per_class == 2 * cfg.meta.k_shot
    assert cfg.meta.beta == 0.001 and cfg.meta.weight_decay == 0.1
    assert cfg.run.rounds == 150 and cfg.run.local_episodes == 5
    assert cfg.fusion.eval_episodes == 30
    assert len(cfg.run.seeds) == 10


def test_unknown_field_named_in_error():
    with pytest.raises(ConfigError, match="meta.alpa"):
        hc.from_dict({"meta": {"alpa": 0.1}})
    with pytest.raises(ConfigError, match="bogus"):
        hc.from_dict({"bogus": {}})
    with pytest.raises(ConfigError, match="run.variantt"):
        hc.from_dict({"run": {"variantt": "X"}})


def test_invalid_value_flags_section():
    with pytest.raises(ConfigError, match="meta"):
        hc.from_dict({"meta": {"lam": -1.0}})
    with pytest.raises(ConfigError, match="dataset"):
        hc.from_dict({"dataset": {"kind": "parquet"}})


def test_from_file_round_trip(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(TINY))
    assert hc.from_file(path) == hc.from_dict(TINY)


def test_override_variant_and_seed():
    cfg = tiny_config()
    out = hc.override(cfg, variant="FedAvg_ATML3", seed=5)
    assert out.run.variant == "FedAvg_ATML3"
    assert out.run.seeds == (5,)


def _leaf_paths(d, prefix=()):
    for k, v in d.items():
        if isinstance(v, dict):
            yield from _leaf_paths(v, prefix + (k,))
        else:
            yield prefix + (k,), v


def test_config_hash_covers_every_field():
    cfg = tiny_config()
    base_raw = hc.canonical_dict(cfg)
    base_hash = hc.config_hash(cfg)
    for path, value in _leaf_paths(base_raw):
        raw = copy.deepcopy(base_raw)
        node = raw
        for k in path[:-1]:
            node = node[k]
        key = path[-1]
        if isinstance(value, bool):
            node[key] = not value
        elif isinstance(value, (int, float)):
            node[key] = value + 1
        elif isinstance(value, str):
            node[key] = value + "_x"
        elif isinstance(value, (list, tuple)):
            node[key] = list(value) + [99]
        elif value is None:
            node[key] = 123
        else:
            pytest.fail(f"unhandled leaf type at {path}: {type(value)}")
        blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
        import hashlib
        assert hashlib.sha256(blob.encode()).hexdigest() != base_hash, path


def test_config_hash_stable_across_calls():
    assert hc.config_hash(tiny_config()) == hc.config_hash(tiny_config())


# ---------------------------------------------------------------- variants


def test_variant_matrix_complete():
    assert set(ALL_VARIANTS) == {
        "ATML_local", "ATML3_local", "MAML_local", "FedAvg_plain", "FedAvg_MAML",
        "FedAvg_ATML3", "FedAcc_plain", "FedAcc_MAML", "DWA_FML",
        "baseline_MLP", "baseline_LR", "baseline_KNN",
    }


def test_variant_policies():
    assert plan_variant("DWA_FML").policy_kind == "dynamic_weight"
    assert plan_variant("FedAcc_MAML").policy_kind == "dynamic_weight"
    assert plan_variant("FedAvg_ATML3").policy_kind == "average"
    assert plan_variant("ATML3_local").topology == "local_hospitals"
    assert plan_variant("ATML_local").topology == "local_single"
    assert plan_variant("baseline_KNN").baseline_kind == "knn"
    with pytest.raises(ConfigError, match="variant"):
        plan_variant("FedProx")


def test_maml_mode_overrides():
    base = MetaConfig()
    eff = effective_meta(base, plan_variant("MAML_local"))
    assert eff.focal == FocalParams(1.0, 0.0)
    assert eff.outer_loss == "sum"
    atml = effective_meta(base, plan_variant("ATML_local"))
    assert atml == base


# ---------------------------------------------------------------- gradcheck


def test_gradcheck_all_paths_pass():
    results = run_gradcheck()
    assert all(r.passed for r in results), format_results(results)
    names = {r.name for r in results}
    assert "ce_logits" in names
    assert "focal_logits_eta5_lam2" in names
    assert "at_loss_composition" in names
    assert any(n.startswith("net_enc3_bn") for n in names)
    assert any(n.startswith("net_linear_nobn") for n in names)


def test_gradcheck_lambda0_identity_is_tight():
    results = {r.name: r for r in run_gradcheck()}
    assert results["focal_lambda0_equals_eta_ce"].max_rel_err < 1e-12


def test_gradcheck_negative_control_names_path():
    results = run_gradcheck(corrupt="focal_logits_eta5_lam2")
    failed = [r.name for r in results if not r.passed]
    assert failed == ["focal_logits_eta5_lam2"]
    assert "FAIL" in format_results(results)


# ---------------------------------------------------------------- baselines


def make_test_pool(seed=0):
    return gen_synthetic(SyntheticSpec(
        n_classes=4, dim=6, samples_per_class=(20, 20, 18, 16),
        cluster_spread=1.0, class_separation=3.0, seed=seed))


def independent_knn(episode, k, n_way):
    correct = 0
    for row, label in zip(episode.query.features, episode.query.labels):
        dists = [(float(np.linalg.norm(s - row)), i)
                 for i, s in enumerate(episode.support.features)]
        dists.sort()
        votes = [0] * n_way
        for _, i in dists[:k]:
            votes[episode.support.labels[i]] += 1
        best = max(range(n_way), key=lambda c: (votes[c], -c))
        correct += best == label
    return correct / episode.query.rows


def test_knn_matches_independent_scan():
    pool = make_test_pool()
    cfg = MetaConfig(n_way=2, k_shot=3, finetune_steps=0, tasks_per_episode=1)
    for i in range(20):
        ep = sample_episode(pool, cfg, derive_rng(70, i), allow_reduced_query=True)
        assert knn_accuracy(ep, 3, 2) == independent_knn(ep, 3, 2)


def test_knn_one_shot_is_nearest_neighbor():
    pool = make_test_pool(seed=1)
    cfg = MetaConfig(n_way=2, k_shot=1, tasks_per_episode=1)
    ep = sample_episode(pool, cfg, derive_rng(71), allow_reduced_query=True)
    acc = knn_accuracy(ep, 1, 2)
    correct = 0
    for row, label in zip(ep.query.features, ep.query.labels):
        d = np.linalg.norm(ep.support.features - row, axis=1)
        correct += ep.support.labels[int(np.argmin(d))] == label
    assert acc == correct / ep.query.rows


def test_lr_baseline_on_separable_data():
    pool = gen_synthetic(SyntheticSpec(
        n_classes=2, dim=6, samples_per_class=(40, 40),
        cluster_spread=0.05, class_separation=12.0, seed=2))
    cfg = MetaConfig(n_way=2, k_shot=5, tasks_per_episode=1)
    eps = [sample_episode(pool, cfg, derive_rng(72, i)) for i in range(10)]
    acc = baseline_direct("lr", eps, cfg, seed=0)
    assert acc >= 0.95


def test_mlp_baseline_deterministic():
    pool = make_test_pool(seed=3)
    cfg = MetaConfig(n_way=2, k_shot=5, tasks_per_episode=1)
    ep = sample_episode(pool, cfg, derive_rng(73), allow_reduced_query=True)
    a = baseline_episode_accuracy("mlp", ep, cfg, derive_rng(74))
    b = baseline_episode_accuracy("mlp", ep, cfg, derive_rng(74))
    assert a == b


# ---------------------------------------------------------------- runner / report


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("dwa_run")
    report = run_experiment(tiny_config(), str(out))
    return out, report


def test_runner_report_shapes(tiny_run):
    out, report = tiny_run
    assert report.variant == "DWA_FML"
    assert report.seeds == [0, 1]
    assert len(report.mean_hospital_accs) == 2  # hospitals
    assert (out / "report.json").exists()
    assert (out / "rounds_seed0.jsonl").exists()
    loaded = load_report(str(out))
    assert loaded["config_hash"] == report.config_hash


def test_runner_means_recompute(tiny_run):
    out, _ = tiny_run
    report = load_report(str(out))
    recomputed = recomputed_means(report)
    assert np.allclose(recomputed["mean_hospital_accs"], report["mean_hospital_accs"])
    assert np.allclose(recomputed["mean_avg"], report["mean_avg"])
    assert recomputed["upload_total"] == report["upload_total"]


def test_runner_deterministic_rerun(tiny_run, tmp_path):
    out, _ = tiny_run
    again = tmp_path / "again"
    run_experiment(tiny_config(), str(again))
    a = json.loads((out / "report.json").read_text())
    b = json.loads((again / "report.json").read_text())
    assert a == b
    assert (out / "rounds_seed0.jsonl").read_bytes() == \
        (again / "rounds_seed0.jsonl").read_bytes()


def test_local_variant_emits_traces(tmp_path):
    cfg = tiny_config(variant="ATML3_local", seeds=[0], rounds=2)
    report = run_experiment(cfg, str(tmp_path / "local"))
    assert report.upload_total == 0
    seed0 = report.per_seed[0]
    assert seed0["rounds_log"] is None
    assert seed0["train_trace"] is not None
    assert len(seed0["train_trace"]) == 2  # hospitals
    assert seed0["finetune_curve"] is not None


def test_baseline_variant_single_column(tmp_path):
    cfg = tiny_config(variant="baseline_KNN", seeds=[0, 1])
    report = run_experiment(cfg, str(tmp_path / "knn"))
    assert len(report.mean_hospital_accs) == 1
    assert report.upload_total == 0


def test_comparison_table_and_curves(tiny_run, tmp_path):
    out, _ = tiny_run
    report = load_report(str(out))
    table = comparison_table([report])
    avg = float(table.splitlines()[2].split("|")[-3])
    assert abs(avg - 100 * float(np.mean(report["mean_hospital_accs"]))) < 5e-3
    shots = comparison_table([report], style="shots")
    assert "LSTM" in shots and "n/a" in shots and "Transformer" in shots

    curves_dir = tmp_path / "curves"
    written = write_curves([str(out)], str(curves_dir))
    names = {os.path.basename(p) for p in written}
    assert "fusion_rounds.csv" in names
    assert "finetune_steps.csv" in names
    rows = (curves_dir / "fusion_rounds.csv").read_text().strip().splitlines()
    header, body = rows[0], rows[1:]
    assert header == "x,y,seed,series,variant"
    hos1_seed0 = [r for r in body if r.endswith("DWA_FML")
                  and ",0,hos1," in r]
    assert len(hos1_seed0) == 2  # one point per round


# ---------------------------------------------------------------- CLI


def run_cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "fedmeta", *args],
                          capture_output=True, text=True, cwd=cwd)


def test_cli_gradcheck_passes(tmp_path):
    proc = run_cli("gradcheck", cwd=tmp_path)
    assert proc.returncode == 0, proc.stderr
    assert "PASS" in proc.stdout


def test_cli_run_and_report(tmp_path):
    cfg = copy.deepcopy(TINY)
    cfg["run"]["seeds"] = [0]
    (tmp_path / "cfg.yaml").write_text(yaml.safe_dump(cfg))
    proc = run_cli("run", "--config", "cfg.yaml", "--out-dir", "out", cwd=tmp_path)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "out" / "report.json").exists()
    assert "Avg" in proc.stdout

    proc = run_cli("report", "out", "--out-dir", "rep", cwd=tmp_path)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "rep" / "comparison.md").exists()
    assert (tmp_path / "rep" / "curves" / "fusion_rounds.csv").exists()


def test_cli_rejects_invalid_config(tmp_path):
    (tmp_path / "bad.yaml").write_text(yaml.safe_dump({"meta": {"alpa": 1}}))
    proc = run_cli("run", "--config", "bad.yaml", cwd=tmp_path)
    assert proc.returncode == 2
    assert "meta.alpa" in proc.stderr


def test_cli_gen_data_round_trip(tmp_path):
    proc = run_cli("gen-data", "--out", "synth.csv", "--classes", "3",
                   "--dim", "4", "--sizes", "12,10,8", "--seed", "5", cwd=tmp_path)
    assert proc.returncode == 0, proc.stderr
    from fedmeta.data import load_csv
    ds = load_csv(tmp_path / "synth.csv")
    assert [ds.class_size(c) for c in ds.classes()] == [12, 10, 8]
