"""Multi-seed ablations over the spatial critic's frame count (k) or the
temporal critic's downsampling (phi), reporting mean and standard deviation
across seeds per group. Raw per-run CSVs ship with the report bundle so every
aggregate is recomputable.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import os
from dataclasses import dataclass, field

from .data import RawVideo
from .discriminators import PHI_CHOICES, SpatialDiscConfig, TemporalDiscConfig
from .evaluation import EvalStats, FeatureExtractor, evaluate_model
from .generator import GeneratorConfig
from .training import DivergenceError, TrainConfig, Trainer


@dataclass
class AblationSpec:
    axis: str  # "k" or "phi"
    values: tuple = (1, 8)
    seeds: tuple[int, ...] = (0, 1, 2)
    steps_per_run: int = 5000
    eval_every: int = 500
    eval_samples: int = 256

    def __post_init__(self):
        if self.axis not in ("k", "phi"):
            raise ValueError("axis must be 'k' or 'phi'")
        if len(self.values) < 2:
            raise ValueError("need at least 2 values to compare")
        if len(self.seeds) < 2:
            raise ValueError("need at least 2 seeds for a meaningful std")
        if self.axis == "phi":
            bad = [v for v in self.values if v not in PHI_CHOICES]
            if bad:
                raise ValueError(f"unknown phi values {bad}; choices: {PHI_CHOICES}")


@dataclass
class RunRecord:
    value: object
    seed: int
    status: str  # "ok" or "diverged"
    curve: list[dict] = field(default_factory=list)  # rows with step/fid/is


@dataclass
class AblationReport:
    spec: AblationSpec
    runs: list[RunRecord]
    groups: dict  # value -> {"steps": [...], "fid_mean": [...], ...}

    @property
    def failures(self) -> list[RunRecord]:
        return [r for r in self.runs if r.status != "ok"]


def _apply_value(spec: AblationSpec, value, spatial: SpatialDiscConfig,
                 temporal: TemporalDiscConfig):
    spatial = copy.deepcopy(spatial)
    temporal = copy.deepcopy(temporal)
    if spec.axis == "k":
        spatial.k = int(value)
    else:
        temporal = dataclasses.replace(temporal, phi=str(value))
    return spatial, temporal


def run_ablation(spec: AblationSpec, gen_config: GeneratorConfig,
                 spatial_config: SpatialDiscConfig, temporal_config: TemporalDiscConfig,
                 train_config: TrainConfig, dataset: list[RawVideo],
                 extractor: FeatureExtractor, dataset_stats: EvalStats,
                 out_dir: str, verbose: bool = False) -> AblationReport:
    """Train |values| x |seeds| models and aggregate FID/IS curves per value.

    A diverging run is recorded as failed rather than silently dropped.
    """
    os.makedirs(out_dir, exist_ok=True)
    runs: list[RunRecord] = []
    for value in spec.values:
        for seed in spec.seeds:
            spatial, temporal = _apply_value(spec, value, spatial_config, temporal_config)
            run_dir = os.path.join(out_dir, f"{spec.axis}_{value}_seed{seed}")
            trainer = Trainer(gen_config, spatial, temporal, train_config, dataset,
                              seed=seed, out_dir=run_dir)
            record = RunRecord(value=value, seed=seed, status="ok")

            def eval_fn(tr, _record=record):
                result = evaluate_model(tr.state.ema_generator, extractor, dataset_stats,
                                        spec.eval_samples, stddev=1.0, seed=1234,
                                        batch_size=train_config.batch_size)
                _record.curve.append({"step": tr.state.step, "fid": result.fid,
                                      "is": result.is_mean})
                return result.fid, result.is_mean

            try:
                trainer.run(total_steps=spec.steps_per_run, log_every=spec.eval_every,
                            eval_every=spec.eval_every, eval_fn=eval_fn)
            except DivergenceError as exc:
                record.status = "diverged"
                if verbose:
                    print(f"run {spec.axis}={value} seed={seed} diverged: {exc}")
            if verbose and record.status == "ok":
                last = record.curve[-1] if record.curve else {}
                print(f"run {spec.axis}={value} seed={seed}: {last}")
            runs.append(record)

    groups = aggregate(runs)
    _write_summary(spec, groups, os.path.join(out_dir, "summary.csv"))
    _plot_groups(spec, groups, os.path.join(out_dir, "summary.png"))
    return AblationReport(spec, runs, groups)


def aggregate(runs: list[RunRecord]) -> dict:
    """Per-value mean/std over seeds, for the steps all healthy runs share."""
    import numpy as np

    groups: dict = {}
    by_value: dict = {}
    for record in runs:
        if record.status == "ok":
            by_value.setdefault(record.value, []).append(record)
    for value, records in by_value.items():
        step_sets = [set(r["step"] for r in rec.curve) for rec in records]
        common = sorted(set.intersection(*step_sets)) if step_sets else []
        fid = np.array([[next(r["fid"] for r in rec.curve if r["step"] == s)
                         for s in common] for rec in records])
        is_ = np.array([[next(r["is"] for r in rec.curve if r["step"] == s)
                         for s in common] for rec in records])
        groups[value] = {
            "steps": common,
            "fid_mean": fid.mean(axis=0).tolist() if common else [],
            "fid_std": fid.std(axis=0).tolist() if common else [],
            "is_mean": is_.mean(axis=0).tolist() if common else [],
            "is_std": is_.std(axis=0).tolist() if common else [],
            "n_runs": len(records),
        }
    return groups


def _write_summary(spec: AblationSpec, groups: dict, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["axis", "value", "step", "fid_mean", "fid_std",
                         "is_mean", "is_std", "n_runs"])
        for value, g in groups.items():
            for i, step in enumerate(g["steps"]):
                writer.writerow([spec.axis, value, step, g["fid_mean"][i], g["fid_std"][i],
                                 g["is_mean"][i], g["is_std"][i], g["n_runs"]])


def _plot_groups(spec: AblationSpec, groups: dict, path: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for value, g in groups.items():
        if not g["steps"]:
            continue
        ax1.errorbar(g["steps"], g["fid_mean"], yerr=g["fid_std"], marker="o",
                     capsize=3, label=f"{spec.axis}={value}")
        ax2.errorbar(g["steps"], g["is_mean"], yerr=g["is_std"], marker="o",
                     capsize=3, label=f"{spec.axis}={value}")
    ax1.set_xlabel("step")
    ax1.set_ylabel("FID")
    ax2.set_xlabel("step")
    ax2.set_ylabel("IS")
    ax1.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
