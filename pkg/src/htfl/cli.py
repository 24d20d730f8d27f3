"""Command line entry point.

Commands:
  defaults            print the full default config as YAML
  partition           write a client partition file plus label histograms
  run                 run an experiment, streaming per-round CSV rows
  report              tabulate finished runs found under a directory
  sweep               run one experiment per value along one config axis

Every config leaf is available as ``--section.key value``; ``--config``
loads a YAML file first. Exit codes: 0 ok, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import build_experiment, build_scenario, dataset_factory, load_config
from .engine import run_experiment
from .errors import ConfigError, HtflError
from .metrics import MEGABYTE, summarize_run
from .partition import _PARTITIONERS

SWEEP_AXES = {
    "alpha": "scenario.alpha",
    "rho": "experiment.participation",
    "epochs": "experiment.local_epochs",
    "feature_dim": "model.feature_dim",
    "group": "model.group",
    "method": "method.name",
}


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="YAML", help="config file to load first")
    for path in cfgmod.leaf_paths():
        parser.add_argument(f"--{path}", dest=path, metavar="V", default=None,
                            help=f"override config key {path}")


def _collect_overrides(args: argparse.Namespace) -> dict[str, str]:
    return {
        path: str(getattr(args, path))
        for path in cfgmod.leaf_paths()
        if getattr(args, path, None) is not None
    }


def _load(args: argparse.Namespace) -> dict:
    return load_config(args.config, _collect_overrides(args))


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def cmd_defaults(_args) -> int:
    print(cfgmod.dump_defaults(), end="")
    return 0


def cmd_partition(args) -> int:
    cfg = _load(args)
    seed = cfg["experiment"]["seed"]
    ds = dataset_factory(cfg)(seed)
    scenario = build_scenario(cfg)
    result = _PARTITIONERS[scenario.kind](ds, scenario, seed)
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)

    lines = ["# htfl partition v1"]
    params = " ".join(f"{k}={v}" for k, v in sorted(result.params.items()))
    lines.append(
        f"# seed={seed} n_clients={result.n_clients} num_classes={ds.num_classes} "
        f"n_samples={ds.n_samples} {params}"
    )
    for i in range(result.n_clients):
        train = " ".join(map(str, result.client_train[i]))
        test = " ".join(map(str, result.client_test[i]))
        lines.append(f"{i} | {train} | {test}")
    (out / "partition.txt").write_text("\n".join(lines) + "\n")

    hist_lines = []
    for i in range(result.n_clients):
        idx = np.concatenate([result.client_train[i], result.client_test[i]])
        counts = np.bincount(ds.labels[idx], minlength=ds.num_classes)
        pairs = " ".join(f"{c}:{n}" for c, n in enumerate(counts) if n)
        hist_lines.append(
            f"client {i}: n={len(idx)} train={len(result.client_train[i])} "
            f"test={len(result.client_test[i])} | {pairs}"
        )
    (out / "histogram.txt").write_text("\n".join(hist_lines) + "\n")
    print(f"wrote {out / 'partition.txt'} and {out / 'histogram.txt'}")
    return 0


def _run_into(cfg: dict, out: Path) -> dict:
    exp = build_experiment(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_meta.json").write_text(json.dumps(cfg, indent=2) + "\n")
    n = exp.n_clients
    header = ["repeat", "round", "avg_acc", "unweighted_avg_acc", "up_bytes",
              "down_bytes", "client_s", "server_s"]
    header += [f"client_acc_{i}" for i in range(n)]
    csv_path = out / "results.csv"
    with csv_path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if csv_path.stat().st_size == 0:
            writer.writerow(header)
            fh.flush()

        def on_round(repeat, rep):
            row = [repeat, rep.round, _fmt(rep.avg_acc), _fmt(rep.unweighted_avg_acc),
                   rep.upload_bytes, rep.download_bytes,
                   f"{rep.client_seconds:.6f}", f"{rep.server_seconds:.6f}"]
            accs = rep.per_client_acc if rep.per_client_acc is not None else [None] * n
            row += [_fmt(a) for a in accs]
            writer.writerow(row)
            fh.flush()

        result = run_experiment(exp, dataset_factory(cfg), on_round=on_round)
    summary = {
        "method": exp.method,
        "group": exp.group,
        "scenario": cfg["scenario"],
        **result.summary,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(cfg["output_dir"])
    summary = _run_into(cfg, out)
    agg = summary["aggregate"]
    print(f"method={summary['method']} group={summary['group']}")
    print(f"final accuracy: mean={agg['final_acc']['mean']:.4f} "
          f"std={agg['final_acc']['std']:.4f} best={agg['final_acc']['best']:.4f}")
    print(f"results in {out}")
    return 0


_REPORT_COLUMNS = ["method", "final_mean", "final_std", "best_mean", "best_std",
                   "conv_round", "up_mb", "down_mb"]


def _summary_row(summary: dict) -> dict:
    agg = summary["aggregate"]
    conv = agg.get("converged_round")
    return {
        "method": summary.get("method", "?"),
        "final_mean": f"{agg['final_acc']['mean']:.4f}",
        "final_std": f"{agg['final_acc']['std']:.4f}",
        "best_mean": f"{agg['best_smoothed_acc']['mean']:.4f}",
        "best_std": f"{agg['best_smoothed_acc']['std']:.4f}",
        "conv_round": f"{conv['mean']:.1f}" if conv else "-",
        "up_mb": f"{agg['mean_up_bytes']['mean'] / MEGABYTE:.4f}",
        "down_mb": f"{agg['mean_down_bytes']['mean'] / MEGABYTE:.4f}",
    }


def _gather_summaries(root: Path) -> list[dict]:
    if not root.is_dir():
        raise HtflError(f"report directory not found: {root}")
    found = sorted(root.glob("**/summary.json"))
    if not found:
        raise HtflError(f"no summary.json files under {root}")
    return [json.loads(p.read_text()) for p in found]


def cmd_report(args) -> int:
    root = Path(args.results_dir)
    rows = sorted((_summary_row(s) for s in _gather_summaries(root)),
                  key=lambda r: r["method"])
    widths = {c: max(len(c), *(len(r[c]) for r in rows)) for c in _REPORT_COLUMNS}
    print("  ".join(c.ljust(widths[c]) for c in _REPORT_COLUMNS))
    for r in rows:
        print("  ".join(r[c].ljust(widths[c]) for c in _REPORT_COLUMNS))
    with (root / "report.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_REPORT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {root / 'report.csv'}")
    return 0


def cmd_sweep(args) -> int:
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis '{args.axis}'; known: {sorted(SWEEP_AXES)}")
    values = [v for v in (args.values or "").split(",") if v != ""]
    if not values:
        raise ConfigError("sweep needs at least one value (--values v1,v2,...)")
    base_overrides = _collect_overrides(args)
    root = None
    for value in values:
        overrides = dict(base_overrides)
        overrides[SWEEP_AXES[args.axis]] = value
        cfg = load_config(args.config, overrides)
        root = Path(cfg["output_dir"])
        sub = root / f"{args.axis}={value}"
        cfg["output_dir"] = str(sub)
        print(f"[sweep] {args.axis}={value}")
        _run_into(cfg, sub)
    args.results_dir = str(root)
    return cmd_report(args)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="htfl",
        description="Desk-scale heterogeneous federated learning benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("defaults", help="print the default config").set_defaults(fn=cmd_defaults)

    p_part = sub.add_parser("partition", help="write a partition file")
    _add_config_flags(p_part)
    p_part.set_defaults(fn=cmd_partition)

    p_run = sub.add_parser("run", help="run an experiment")
    _add_config_flags(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_rep = sub.add_parser("report", help="tabulate runs under a directory")
    p_rep.add_argument("results_dir")
    p_rep.set_defaults(fn=cmd_report)

    p_sweep = sub.add_parser("sweep", help="run one experiment per axis value")
    p_sweep.add_argument("--axis", required=True, help=f"one of {sorted(SWEEP_AXES)}")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    _add_config_flags(p_sweep)
    p_sweep.set_defaults(fn=cmd_sweep)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except HtflError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
