"""End-to-end experiment execution: config -> trained models -> report.

Per seed, every variant shares the same derived streams (model init, hospital
shards, reporting episodes), so variant comparisons are paired.  Reporting
evaluates each hospital's final local model on a fresh episode set distinct
from the server-side gate episodes.
"""

import logging
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from .. import _kernels
from ..data import build_client_pools, gen_synthetic, load_csv, shard_hospitals, split
from ..fedsim import (ClientState, FederationState, FusionPolicy, record_to_json,
                      run_federation)
from ..metalearn import (finetune_curve, finetune_eval_on, sample_episode,
                         train_local, train_plain)
from ..numcore.model import ModelConfig, init_params
from ..seeds import (STREAM_CLIENT, STREAM_CURVE, STREAM_INIT, STREAM_REPORT,
                     STREAM_SHARD, STREAM_TRACE, derive_rng)
from .baselines import baseline_direct
from .config import CsvSpec, ExperimentConfig, canonical_dict, config_hash
from .variants import (LEARNER_PLAIN, TOPO_BASELINE, TOPO_FEDERATED,
                       TOPO_LOCAL_HOSPITALS, TOPO_LOCAL_SINGLE, VariantPlan,
                       effective_meta, plan_variant)

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


@dataclass
class SeedResult:
    seed: int
    hospital_accs: list
    avg: float
    uploads: int
    rounds_log: str = None        # file name relative to the run dir
    finetune_curve: list = None   # per hospital: accuracy per curve step
    train_trace: list = None      # per hospital: [iteration, accuracy] pairs


@dataclass
class RunReport:
    schema_version: int
    variant: str
    config_hash: str
    backend: str
    seeds: list
    per_seed: list
    mean_hospital_accs: list
    std_hospital_accs: list
    mean_avg: float
    std_avg: float
    upload_total: int
    config: dict


def build_pools(exp: ExperimentConfig):
    """Dataset from the config, split into (train_pool, test_pool)."""
    if isinstance(exp.dataset, CsvSpec):
        ds = load_csv(exp.dataset.path, exp.dataset.label_column,
                      exp.dataset.missing_marker, exp.dataset.keep_classes)
    else:
        ds = gen_synthetic(exp.dataset)
    return split(ds, exp.split.common, exp.split.rare)


def model_config_for(exp: ExperimentConfig, input_dim: int) -> ModelConfig:
    return ModelConfig(
        input_dim=input_dim,
        encoder_dims=exp.model.encoder_dims,
        bn_dim=None if exp.model.use_bn else 0,
        head_dims=exp.model.head_dims,
        n_way=exp.meta.n_way,
    )


def _report_episodes(test_pool, cfg, seed, count):
    rng = derive_rng(seed, STREAM_REPORT)
    return [sample_episode(test_pool, cfg, rng, allow_reduced_query=True)
            for _ in range(count)]


def _trace_fn(test_pool, mcfg, cfg, seed, count, sink):
    rng = derive_rng(seed, STREAM_TRACE)
    eps = [sample_episode(test_pool, cfg, rng, allow_reduced_query=True)
           for _ in range(count)]

    def fn(iteration, theta):
        sink.append([iteration, finetune_eval_on(theta, eps, mcfg, cfg)])

    return fn


def run_seed(exp: ExperimentConfig, plan: VariantPlan, pools, seed: int,
             out_dir=None) -> SeedResult:
    train_pool, test_pool = pools
    cfg = effective_meta(exp.meta, plan)
    mcfg = model_config_for(exp, train_pool.dim)
    run = exp.run

    report_eps = _report_episodes(test_pool, cfg, seed, run.report_episodes)

    if plan.topology == TOPO_BASELINE:
        acc = baseline_direct(plan.baseline_kind, report_eps, cfg, seed)
        return SeedResult(seed=seed, hospital_accs=[acc], avg=acc, uploads=0)

    trainer = train_plain if plan.learner == LEARNER_PLAIN else train_local
    theta0 = init_params(mcfg, derive_rng(seed, STREAM_INIT))
    budget = run.rounds * run.local_episodes
    rounds_log = None
    uploads = 0
    traces = None

    if plan.topology == TOPO_LOCAL_SINGLE:
        shard_pools = [train_pool]
    elif plan.topology in (TOPO_LOCAL_HOSPITALS, TOPO_FEDERATED):
        spec = shard_hospitals(train_pool, exp.split.hospitals,
                               exp.split.classes_per_hospital,
                               derive_rng(seed, STREAM_SHARD),
                               rare_classes=exp.split.rare)
        shard_pools = build_client_pools(train_pool, spec, exp.split.sample_split,
                                         derive_rng(seed, STREAM_SHARD, 1))
    else:
        raise ValueError(f"unknown topology {plan.topology!r}")

    if plan.topology == TOPO_FEDERATED:
        clients = [ClientState(i, p) for i, p in enumerate(shard_pools)]
        policy = FusionPolicy(kind=plan.policy_kind,
                              eval_episodes=exp.fusion.eval_episodes,
                              eval_seed=exp.fusion.eval_seed)
        model_dir = None
        if run.save_client_models and out_dir is not None:
            model_dir = os.path.join(out_dir, f"models_seed{seed}")
        state = FederationState(
            global_model=theta0, clients=clients, eval_pool=test_pool,
            policy=policy, model_cfg=mcfg, meta_cfg=cfg, master_seed=seed,
            trainer=trainer, model_dir=model_dir,
        )
        hook = None
        fh = None
        if out_dir is not None:
            rounds_log = f"rounds_seed{seed}.jsonl"
            fh = open(os.path.join(out_dir, rounds_log), "w")

            def hook(rec, _fh=fh):
                import json
                _fh.write(json.dumps(record_to_json(rec), sort_keys=True) + "\n")
                _fh.flush()

        try:
            records, _ = run_federation(state, run.rounds, run.local_episodes,
                                        record_hook=hook)
        finally:
            if fh is not None:
                fh.close()
        uploads = sum(rec.uploads for rec in records)
        models = [c.model for c in clients]
    else:
        models = []
        traces = []
        for h, pool in enumerate(shard_pools):
            sink = []
            tfn = None
            tevery = 0
            if run.trace_points > 0:
                tevery = max(1, budget // run.trace_points)
                tfn = _trace_fn(test_pool, mcfg, cfg, seed, run.report_episodes, sink)
            rng = derive_rng(seed, STREAM_CLIENT, h, 0)
            models.append(trainer(theta0, pool, mcfg, cfg, budget, rng,
                                  trace_every=tevery, trace_fn=tfn))
            traces.append(sink)
        if not any(traces):
            traces = None

    hospital_accs = [finetune_eval_on(m, report_eps, mcfg, cfg) for m in models]

    curves = None
    if run.emit_finetune_curve:
        curves = [
            finetune_curve(m, test_pool, mcfg, cfg, run.finetune_curve_steps,
                           run.report_episodes, derive_rng(seed, STREAM_CURVE))
            for m in models
        ]

    return SeedResult(
        seed=seed,
        hospital_accs=hospital_accs,
        avg=float(np.mean(hospital_accs)),
        uploads=uploads,
        rounds_log=rounds_log,
        finetune_curve=curves,
        train_trace=traces,
    )


def run_experiment(exp: ExperimentConfig, out_dir=None) -> RunReport:
    """Execute the configured variant across all seeds."""
    plan = plan_variant(exp.run.variant)
    pools = build_pools(exp)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    results = []
    for seed in exp.run.seeds:
        log.info("variant %s seed %d", plan.name, seed)
        results.append(run_seed(exp, plan, pools, seed, out_dir))

    accs = np.asarray([r.hospital_accs for r in results])
    avgs = np.asarray([r.avg for r in results])
    report = RunReport(
        schema_version=REPORT_SCHEMA_VERSION,
        variant=plan.name,
        config_hash=config_hash(exp),
        backend=_kernels.BACKEND_NAME,
        seeds=[r.seed for r in results],
        per_seed=[asdict(r) for r in results],
        mean_hospital_accs=accs.mean(axis=0).tolist(),
        std_hospital_accs=accs.std(axis=0).tolist(),
        mean_avg=float(avgs.mean()),
        std_avg=float(avgs.std()),
        upload_total=int(sum(r.uploads for r in results)),
        config=canonical_dict(exp),
    )
    if out_dir is not None:
        from .report import write_report
        write_report(report, out_dir)
    return report
