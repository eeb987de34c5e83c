"""Command line entry point: ``trajclust <command> [options]``.

Commands
  gen-data          write a synthetic dataset (features.csv, labels.csv, config.json)
  run               train and cluster one scenario from a JSON manifest
  reproduce-table2  ARI matrix of all methods at k=3 and k=6 on scaled synthetic data
  encode-ehr        window an events CSV into tensor, mask and layout files

Outputs go to ``--out``, else the manifest's ``out`` entry, else
``$TRAJCLUST_OUT/<command>`` (default root ``./trajclust_out``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import date
from pathlib import Path

import numpy as np

from . import ehr
from .experiments import LABEL_KINDS, OMITTED_METHODS, Protocol, ari_matrix, fit_model, \
    model_inputs
from .losses import SCENARIOS, LossWeights
from .metrics import (adjusted_rand_index, cluster_survival_report, km_curves_csv,
                      normalized_mutual_information, write_metrics_json)
from .synthetic import InvalidConfigError, SyntheticConfig, SyntheticDataset, generate_dataset
from .trainer import History

OUT_ENV = "TRAJCLUST_OUT"
DEFAULT_OUT_ROOT = "trajclust_out"
SCENARIO_NAMES = tuple(SCENARIOS) + ("custom",)
FULL_SCALE_PATIENTS = 60000

log = logging.getLogger("trajclust")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


class ManifestError(ValueError):
    pass


def _out_dir(args, command: str, manifest_out: str | None = None) -> Path:
    if args.out:
        return Path(args.out)
    if manifest_out:
        return Path(manifest_out)
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT_ROOT)) / command


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


# ------------------------------------------------------------------ gen-data

def synthetic_config(path: str | None, seed: int | None, scale: float | None
                     ) -> SyntheticConfig:
    cfg = SyntheticConfig.from_file(path) if path else SyntheticConfig()
    if scale is not None:
        if not 0.0 < scale <= 1.0:
            raise InvalidConfigError("scale", "must lie in (0, 1]")
        cfg = replace(cfg, n_patients=max(1, int(round(cfg.n_patients * scale))))
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = synthetic_config(args.config, args.seed, args.scale)
    out = _out_dir(args, "gen-data")
    ds = generate_dataset(cfg)
    ds.save(out)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    log.info("wrote %d patients to %s", len(ds), out)
    return 0


# ----------------------------------------------------------------------- run

def load_manifest(path: str) -> dict:
    """Read and validate a run manifest; relative paths resolve against it."""
    p = Path(path)
    m = json.loads(p.read_text())
    known = {"dataset", "scenario", "weights", "k", "seed", "out", "skip_pretrain",
             "model", "train"}
    unknown = set(m) - known
    if unknown:
        raise ManifestError(f"unknown manifest keys {sorted(unknown)}")
    if "dataset" not in m:
        raise ManifestError("manifest needs a 'dataset' directory")
    data = Path(m["dataset"])
    if not data.is_absolute():
        data = p.parent / data
    m["dataset"] = str(data)
    if m.get("out") and not Path(m["out"]).is_absolute():
        m["out"] = str(p.parent / m["out"])
    return m


def _resolve_run(m: dict, args) -> tuple[dict, Protocol, LossWeights]:
    m = dict(m)
    for key in ("scenario", "k", "seed"):
        if getattr(args, key) is not None:
            m[key] = getattr(args, key)
    if args.skip_pretrain:
        m["skip_pretrain"] = True
    m.setdefault("scenario", "combined")
    m.setdefault("k", 3)
    m.setdefault("seed", 0)
    m.setdefault("skip_pretrain", False)
    if m["scenario"] not in SCENARIO_NAMES:
        raise ManifestError(f"scenario must be one of {SCENARIO_NAMES}, got {m['scenario']!r}")
    if m["scenario"] == "custom":
        if "weights" not in m:
            raise ManifestError("scenario 'custom' needs a 'weights' table")
        weights = LossWeights(**m["weights"])
    else:
        weights = SCENARIOS[m["scenario"]]
    if not Path(m["dataset"], "features.csv").exists():
        raise ManifestError(f"dataset directory {m['dataset']} has no features.csv")
    try:
        protocol = Protocol.from_dict({**m.get("model", {}), **m.get("train", {})})
    except TypeError as exc:
        raise ManifestError(f"bad model/train settings: {exc}") from exc
    return m, protocol, weights


def _write_assignments(path: Path, q: np.ndarray, labels: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "hard_label"] + [f"q_{j + 1}" for j in range(q.shape[1])])
        for i, (row, lab) in enumerate(zip(q, labels)):
            w.writerow([i, int(lab)] + [f"{v:.10f}" for v in row])


def cmd_run(args) -> int:
    m, protocol, weights = _resolve_run(load_manifest(args.config), args)
    out = _out_dir(args, "run", m.get("out"))
    out.mkdir(parents=True, exist_ok=True)
    stage = "load"
    try:
        ds = SyntheticDataset.load(m["dataset"])
        x = model_inputs(ds.features, protocol)
        stage = "train"
        fit = fit_model(x, ds.times, ds.events, weights, int(m["k"]), protocol,
                        int(m["seed"]), skip_pretrain=bool(m["skip_pretrain"]))
        stage = "metrics"
        labels = fit.labels
        report = {"scenario": m["scenario"], "k": int(m["k"]), "seed": int(m["seed"]),
                  "weights": weights.__dict__, "n_patients": len(ds),
                  "cluster_sizes": np.bincount(labels, minlength=int(m["k"])).tolist(),
                  "logrank": cluster_survival_report(labels, ds.times, ds.events)}
        report["ari"] = {kind: adjusted_rand_index(labels, ds.labels(kind))
                         for kind in LABEL_KINDS}
        report["nmi"] = {kind: normalized_mutual_information(labels, ds.labels(kind))
                         for kind in LABEL_KINDS}
        stage = "write"
        if fit.pretrain_history:
            History(fit.pretrain_history).to_csv(out / "pretrain_loss.csv")
        fit.result.history.to_csv(out / "loss.csv")
        _write_assignments(out / "assignments.csv", fit.result.q, labels)
        write_metrics_json(out / "metrics.json", report)
        km_curves_csv(out / "km_curves.csv", labels, ds.times, ds.events)
        fit.model.save(out / "checkpoint")
        # paths as written, so reruns elsewhere stay byte-identical
        raw = json.loads(Path(args.config).read_text())
        paths = {key: raw[key] for key in ("dataset", "out") if key in raw}
        _write_json(out / "run_manifest.json",
                    {**m, **paths, "protocol": protocol.to_dict()})
    except (ManifestError, InvalidConfigError):
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc
    log.info("scenario %s k=%s: ARI %s", m["scenario"], m["k"],
             {k: round(v, 3) for k, v in report["ari"].items()})
    return 0


# --------------------------------------------------------- reproduce-table2

def cmd_reproduce_table2(args) -> int:
    scale = 0.1 if args.scale is None else args.scale
    if not 0.0 < scale <= 1.0:
        raise InvalidConfigError("scale", "must lie in (0, 1]")
    seed = 0 if args.seed is None else args.seed
    protocol = Protocol()
    if args.config:
        protocol = Protocol.from_dict(json.loads(Path(args.config).read_text()))
    out = _out_dir(args, "reproduce-table2")
    out.mkdir(parents=True, exist_ok=True)
    cfg = replace(SyntheticConfig(), n_patients=int(round(FULL_SCALE_PATIENTS * scale)), seed=seed)
    ds = generate_dataset(cfg)
    matrix = ari_matrix(ds, protocol, seed=seed)
    matrix.to_csv(out / "table2.csv")
    (out / "table2.json").write_text(matrix.to_json() + "\n")
    _write_json(out / "table2_setup.json",
                {"synthetic": json.loads(cfg.to_json()), "protocol": protocol.to_dict(),
                 "omitted_methods": list(OMITTED_METHODS),
                 "note": "ac_tpc is an external comparison model and is not run"})
    log.info("wrote ARI matrix to %s", out / "table2.csv")
    return 0


# ---------------------------------------------------------------- encode-ehr

def _read_index_csv(path: str) -> dict[str, date]:
    with open(path, newline="") as fh:
        return {row["patient_id"]: date.fromisoformat(row["date"])
                for row in csv.DictReader(fh)}


def cmd_encode_ehr(args) -> int:
    events = ehr.read_events_csv(args.events)
    spec = ehr.build_feature_spec(events, args.min_prevalence, args.window_days)
    tensors = ehr.encode_cohort(events, spec)
    if args.index:
        tensors = ehr.align_at_index(tensors, _read_index_csv(args.index), spec)
    out = _out_dir(args, "encode-ehr")
    ehr.write_tensors(out, tensors, spec)
    log.info("encoded %d patients, width %d", len(tensors), spec.width)
    return 0


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajclust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--config", help="JSON generator config (defaults: full-size benchmark)")
    g.add_argument("--out")
    g.add_argument("--seed", type=int)
    g.add_argument("--scale", type=float, help="fraction of n_patients to draw")
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", help="train and cluster from a manifest")
    r.add_argument("--config", required=True, help="JSON run manifest")
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    r.add_argument("--scenario", choices=SCENARIO_NAMES)
    r.add_argument("--k", type=int)
    r.add_argument("--skip-pretrain", action="store_true")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("reproduce-table2", help="ARI matrix on scaled synthetic data")
    t.add_argument("--out")
    t.add_argument("--scale", type=float, help="fraction of 60000 patients (default 0.1)")
    t.add_argument("--seed", type=int)
    t.add_argument("--config", help="JSON protocol overrides")
    t.set_defaults(func=cmd_reproduce_table2)

    e = sub.add_parser("encode-ehr", help="window raw events into feature tensors")
    e.add_argument("--events", required=True, help="CSV: patient_id,date,channel,code,value")
    e.add_argument("--index", help="CSV of index events: patient_id,date")
    e.add_argument("--min-prevalence", type=float, default=0.01)
    e.add_argument("--window-days", type=int, default=ehr.WINDOW_DAYS)
    e.add_argument("--out")
    e.set_defaults(func=cmd_encode_ehr)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except InvalidConfigError as exc:
        print(f"error: invalid config field {exc.field}: {exc}", file=sys.stderr)
        return 2
    except (ManifestError, ehr.EventError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
