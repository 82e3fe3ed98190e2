"""Command-line interface.

Subcommands: run (execute a configured experiment), gradcheck (validate all
gradient paths against finite differences), report (comparison table and
curve CSVs from run directories), gen-data (write a synthetic CSV fixture).
"""

import argparse
import logging
import sys

from ..data import SyntheticSpec, gen_synthetic, write_csv
from ..errors import ConfigError, DataFormatError, FedmetaError
from .config import ExperimentConfig, config_hash, from_file, override


def _add_run(sub):
    p = sub.add_parser("run", help="execute a configured experiment across its seeds")
    p.add_argument("--config", help="YAML experiment config (defaults used if omitted)")
    p.add_argument("--variant", help="override run.variant")
    p.add_argument("--seed", type=int, help="run a single seed instead of the config list")
    p.add_argument("--out-dir", help="output directory (default runs/<variant>-<hash12>)")


def _add_gradcheck(sub):
    p = sub.add_parser("gradcheck", help="finite-difference validation of gradient paths")
    p.add_argument("--tol", type=float, default=None, help="relative-error tolerance")


def _add_report(sub):
    p = sub.add_parser("report", help="comparison table and curve CSVs from run dirs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out-dir", default="report_out")
    p.add_argument("--style", choices=("hospitals", "shots"), default="hospitals")


def _add_gen_data(sub):
    p = sub.add_parser("gen-data", help="write a deterministic synthetic CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=9)
    p.add_argument("--dim", type=int, default=24)
    p.add_argument("--sizes", help="comma-separated per-class sample counts")
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=2024)


def _cmd_run(args):
    from .runner import run_experiment

    cfg = from_file(args.config) if args.config else ExperimentConfig()
    cfg = override(cfg, variant=args.variant, seed=args.seed)
    out_dir = args.out_dir
    if out_dir is None:
        out_dir = f"runs/{cfg.run.variant}-{config_hash(cfg)[:12]}"
    report = run_experiment(cfg, out_dir)
    print(f"variant {report.variant}  config {report.config_hash[:12]}")
    for label, acc in zip(
        (f"Hos{i + 1}" for i in range(len(report.mean_hospital_accs))),
        report.mean_hospital_accs,
    ):
        print(f"  {label}: {100 * acc:.2f}%")
    print(f"  Avg: {100 * report.mean_avg:.2f}%  uploads: {report.upload_total}")
    print(f"report written to {out_dir}/report.json")
    return 0


def _cmd_gradcheck(args):
    from .gradcheck import TOL, format_results, run_gradcheck

    results = run_gradcheck(tol=args.tol if args.tol is not None else TOL)
    print(format_results(results))
    return 0 if all(r.passed for r in results) else 1


def _cmd_report(args):
    from .report import comparison_table, load_report, write_curves
    import os

    reports = [load_report(d) for d in args.run_dirs]
    os.makedirs(args.out_dir, exist_ok=True)
    table = comparison_table(reports, style=args.style)
    table_path = os.path.join(args.out_dir, "comparison.md")
    with open(table_path, "w") as f:
        f.write(table)
    print(table)
    written = write_curves(args.run_dirs, os.path.join(args.out_dir, "curves"))
    print(f"table written to {table_path}")
    for path in written:
        print(f"curve data written to {path}")
    return 0


def _cmd_gen_data(args):
    sizes = None
    if args.sizes:
        sizes = tuple(int(s) for s in args.sizes.split(","))
    spec_kwargs = dict(
        n_classes=args.classes, dim=args.dim, cluster_spread=args.spread,
        class_separation=args.separation, seed=args.seed,
    )
    if sizes is not None:
        spec_kwargs["samples_per_class"] = sizes
    ds = gen_synthetic(SyntheticSpec(**spec_kwargs))
    write_csv(ds, args.out)
    print(f"wrote {ds.rows} rows, {len(ds.classes())} classes to {args.out}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fedmeta",
        description="Federated meta-learning simulator for few-shot disease prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_gradcheck(sub)
    _add_report(sub)
    _add_gen_data(sub)
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "run": _cmd_run,
        "gradcheck": _cmd_gradcheck,
        "report": _cmd_report,
        "gen-data": _cmd_gen_data,
    }
    try:
        code = handlers[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        code = 2
    except (DataFormatError, FedmetaError) as e:
        print(f"error: {e}", file=sys.stderr)
        code = 1
    raise SystemExit(code)


if __name__ == "__main__":
    main()
