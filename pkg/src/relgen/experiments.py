"""Experiment orchestration: multi-seed comparisons and ablations.

These helpers are shared by the command-line entry points and the
acceptance tests so both report numbers produced by the same code path.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .data import DomainDataset, gen_dg15
from .model import (
    MultiHeadModel,
    TrainConfig,
    build_model,
    erm_predictor,
    evaluate,
    relational_predictor,
    rwft_predictor,
    train,
    train_erm,
)

# the reference benchmark's learning rate underfits a fresh width-64 network
# in 30 epochs; experiments default to this faster rate while keeping every
# other reference value (see TrainConfig defaults)
TUNED_LR = 1e-3


def tuned_config(**overrides) -> TrainConfig:
    cfg = TrainConfig(lr=TUNED_LR)
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


def run_relational(
    dataset: DomainDataset,
    config: TrainConfig,
    infer_mode: str | None = None,
    split: str = "test",
):
    """Train the relation-weighted model and evaluate one split."""
    model = build_model(dataset, config)
    history = train(model, dataset, config)
    mode = infer_mode or ("uniform" if config.relation_mode == "uniform" else "fused")
    report = evaluate(relational_predictor(model, dataset, config.beta, mode), dataset, split)
    return model, history, report


def run_erm(dataset: DomainDataset, config: TrainConfig, split: str = "test"):
    model, history = train_erm(dataset, config)
    report = evaluate(erm_predictor(model, dataset), dataset, split)
    return model, history, report


def _aggregate(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "per_seed": [float(v) for v in arr],
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
    }


def method_comparison(
    seeds,
    config: TrainConfig,
    dataset_factory=gen_dg15,
    include_rwft: bool = False,
    split: str = "test",
) -> dict:
    """Mean test metric per method over seeds; one fresh world per seed."""
    seeds = [int(s) for s in seeds]
    metrics: dict[str, list[float]] = {"relational": [], "erm": []}
    reports: dict[str, list[dict]] = {"relational": [], "erm": []}
    if include_rwft:
        metrics["rw_finetune"] = []
        reports["rw_finetune"] = []
    for s in seeds:
        dataset = dataset_factory(s)
        cfg = replace(config, seed=s)
        _, _, rep_rel = run_relational(dataset, cfg, split=split)
        metrics["relational"].append(rep_rel.mean)
        reports["relational"].append(rep_rel.to_dict())
        erm_model, _, rep_erm = run_erm(dataset, cfg, split=split)
        metrics["erm"].append(rep_erm.mean)
        reports["erm"].append(rep_erm.to_dict())
        if include_rwft:
            rep_ft = evaluate(rwft_predictor(erm_model, dataset, cfg), dataset, split)
            metrics["rw_finetune"].append(rep_ft.mean)
            reports["rw_finetune"].append(rep_ft.to_dict())
    out = {}
    for name, vals in metrics.items():
        out[name] = _aggregate(vals)
        out[name]["reports"] = reports[name]
    out["seeds"] = seeds
    return out


RELATION_VARIANTS = (
    # (label, config overrides, inference mode)
    ("none", {"relation_mode": "uniform"}, "uniform"),
    ("fixed", {"beta": 1.0}, "fused"),
    ("learned", {"beta": 0.0}, "fused"),
    ("fused", {}, "fused"),
)


def relation_ablation(seeds, config: TrainConfig, dataset_factory=gen_dg15) -> list[dict]:
    """Test metric for each relation source: none/fixed/learned/fused."""
    seeds = [int(s) for s in seeds]
    rows = []
    for label, overrides, mode in RELATION_VARIANTS:
        vals = []
        for s in seeds:
            dataset = dataset_factory(s)
            cfg = replace(config, seed=s, **overrides)
            _, _, rep = run_relational(dataset, cfg, infer_mode=mode)
            vals.append(rep.mean)
        rows.append({"variant": label, **_aggregate(vals)})
    return rows


def consistency_ablation(seeds, config: TrainConfig, dataset_factory=gen_dg15) -> list[dict]:
    """Test metric with the consistency term off versus at its configured weight."""
    seeds = [int(s) for s in seeds]
    rows = []
    for lam in (0.0, config.lam):
        vals = []
        for s in seeds:
            dataset = dataset_factory(s)
            cfg = replace(config, seed=s, lam=lam)
            _, _, rep = run_relational(dataset, cfg)
            vals.append(rep.mean)
        rows.append({"variant": f"lam={lam:g}", **_aggregate(vals)})
    return rows
