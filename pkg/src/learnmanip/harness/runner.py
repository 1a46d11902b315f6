"""Multi-seed experiment execution and persistence.

A run directory holds:

``metrics.jsonl``
    one record per (method, seed, epoch), keys sorted, no timing data;
``timings.jsonl``
    wall-clock milliseconds per (method, seed, epoch), kept apart so the
    metrics file is byte-reproducible;
``summary.json``
    per-method mean and sample standard deviation of final test accuracy;
``config.yaml``
    the resolved configuration.
"""

from __future__ import annotations

import json
import logging
import math
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..augment import GumbelConfig, init_augmenter, prefit_substitution_table
from ..data import (
    Dataset,
    Splits,
    default_blob_means,
    gen_blobs,
    gen_token_task,
    load_external,
    merge,
    subsample_imbalanced,
    subsample_low_data,
)
from ..errors import ConfigError, DataError, LearnManipError
from ..models import accuracy
from ..rewards import AugmentReward, DeltaReward, WeightReward, WeightTable
from ..trainer import (
    ReestimatedWeighting,
    TrainerConfig,
    baseline_proportion_weights,
    class_coefficient_summary,
    train_joint,
)
from .config import MethodSpec, RunConfig, load_config

log = logging.getLogger(__name__)

AUGMENT_LR_PHI = 1e-2
EXIT_OK, EXIT_CONFIG, EXIT_ALL_FAILED = 0, 1, 2


@dataclass
class RunOutcome:
    exit_code: int
    out_dir: Path
    summary: dict


# --------------------------------------------------------------------- data


def _pool(cfg: RunConfig, seed: int) -> Dataset:
    ds = cfg.dataset
    if ds.generator in ("csv", "idx"):
        return load_external(ds.path, ds.generator, ds.labels_path)
    if ds.protocol == "imbalanced":
        extra = ds.val_per_class + ds.n_test_per_class
        counts = [0, 0]
        counts[ds.minority_class] = ds.minority_count + extra
        counts[1 - ds.minority_class] = ds.majority_count + extra
    else:
        counts = [ds.n_train_per_class + ds.val_per_class + ds.n_test_per_class] * ds.n_classes
    if ds.generator == "blobs":
        means = default_blob_means(len(counts), ds.dim, ds.separation)
        return gen_blobs(seed, counts, means, ds.stddev)
    return gen_token_task(seed, ds.vocab_size, ds.seq_len, counts)


def build_splits(cfg: RunConfig, seed: int) -> Splits:
    ds = cfg.dataset
    try:
        pool = _pool(cfg, seed)
        if ds.protocol == "imbalanced":
            return subsample_imbalanced(pool, seed, ds.minority_count, ds.majority_count, ds.val_per_class,
                                        ds.n_test_per_class, ds.minority_class)
        return subsample_low_data(pool, seed, ds.n_train_per_class, ds.val_per_class, ds.n_test_per_class)
    except DataError as exc:
        raise ConfigError(f"dataset: {exc}") from None


# ------------------------------------------------------------------ methods


def build_reward(cfg: RunConfig, method: MethodSpec, train: Dataset, seed: int):
    if method.reward == "delta":
        return DeltaReward()
    if method.reward == "weight":
        return WeightReward(WeightTable(train.ids, mode=method.weight_mode), frozen=method.frozen)
    if method.reward == "proportion":
        return WeightReward(baseline_proportion_weights(train), frozen=True)
    if method.reward == "ren":
        return ReestimatedWeighting()
    spec = method.augment or cfg.augment
    if train.kind == "token":
        a = init_augmenter("token", train.n_classes, train.vocab_size)
        if spec.prefit:
            a = prefit_substitution_table(a, train.features, train.labels)
    else:
        a = init_augmenter("continuous", train.n_classes, train.features.shape[1], cfg.model.hidden,
                           seed=seed, bound=spec.bound, sigma=spec.sigma)
    gumbel = GumbelConfig(spec.tau, spec.anneal, spec.tau_floor, spec.n_substitutions, spec.n_samples)
    return AugmentReward(a, gumbel, frozen=method.frozen)


def trainer_config(cfg: RunConfig, method: MethodSpec, seed: int, **extra) -> TrainerConfig:
    overrides = cfg.trainer.merged_with(method.trainer).overrides()
    if method.reward == "augment":
        overrides.setdefault("lr_phi", AUGMENT_LR_PHI)
    if method.frozen:
        overrides["lr_phi"] = 0.0
    overrides.update(extra)
    return TrainerConfig(seed=seed, arch=cfg.model.arch, hidden=cfg.model.hidden, **overrides)


def _merged_config(cfg, method, seed, splits: Splits, steps: int) -> tuple[TrainerConfig, Splits]:
    pooled = merge(splits.train, splits.validation)
    base = trainer_config(cfg, method, seed)
    per_epoch = math.ceil(len(pooled) / base.batch_size)
    tc = trainer_config(cfg, method, seed, epochs=max(1, math.ceil(steps / per_epoch)), max_steps=steps,
                        select_best=False)
    empty = splits.validation.subset(np.zeros(0, dtype=np.int64))
    return tc, Splits(pooled, empty, splits.test)


# ------------------------------------------------------------------ records


def _clean(value):
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        return _clean(value.item())
    return value


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True)


def sample_std(values) -> float:
    """Standard deviation with the n-1 convention; 0.0 for a single value."""
    return statistics.stdev(values) if len(values) > 1 else 0.0


def run_experiment(config, out_dir=None, seeds=None) -> RunOutcome:
    """Run every method on every seed and write the run directory.

    ``config`` is a :class:`RunConfig` or a path to a YAML file. A seed
    whose training aborts is recorded as failed and the run moves on.
    """
    cfg = load_config(config) if not isinstance(config, RunConfig) else config
    if seeds is not None:
        cfg = cfg.model_copy(update={"seeds": list(seeds)})
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")
    run_id = cfg.name

    splits = {seed: build_splits(cfg, seed) for seed in cfg.seeds}
    metrics_lines, timing_lines = [], []
    methods_summary: dict = {}

    for method in cfg.methods:
        values, failed, best_steps, extras = {}, [], [], {}
        for seed in cfg.seeds:
            sp = splits[seed]
            if method.merged_from is not None:
                ref = methods_summary[method.merged_from]
                if not ref["best_steps"]:
                    log.warning("method %s: no successful %s seeds to size the merged run", method.name,
                                method.merged_from)
                    failed.append(seed)
                    continue
                steps = int(round(statistics.fmean(ref["best_steps"])))
                tc, sp = _merged_config(cfg, method, seed, sp, steps)
            else:
                tc = trainer_config(cfg, method, seed)
            tick = [time.perf_counter()]

            def on_epoch(report, seed=seed):
                now = time.perf_counter()
                timing_lines.append(_dumps({"run_id": run_id, "method": method.name, "seed": seed,
                                            "epoch": report.epoch,
                                            "wall_clock_ms": round((now - tick[0]) * 1000.0, 3)}))
                tick[0] = now

            seed_lines = []

            def record(report, seed=seed):
                seed_lines.append(_dumps({
                    "run_id": run_id, "method": method.name, "setting": cfg.dataset.setting, "seed": seed,
                    "epoch": report.epoch, "step": report.step, "train_loss": report.train_loss,
                    "val_loss": report.val_loss, "val_accuracy": report.val_accuracy,
                    "test_accuracy": report.test_accuracy, "manipulation": report.manipulation,
                }))
                on_epoch(report)

            try:
                reward = build_reward(cfg, method, sp.train, seed)
                result = train_joint(tc, sp, reward, on_epoch=record)
            except (LearnManipError, FloatingPointError) as exc:
                log.warning("method %s seed %s failed: %s", method.name, seed, exc)
                failed.append(seed)
                continue
            metrics_lines.extend(seed_lines)
            values[seed] = accuracy(result.params, sp.test.design_matrix(), sp.test.labels)
            best_steps.append(result.best_step)
            if isinstance(result.reward, WeightReward):
                extras[seed] = {"class_coefficients": class_coefficient_summary(
                    result.reward.table, sp.train, tc.batch_size, seed)}

        accs = list(values.values())
        methods_summary[method.name] = {
            "reward": method.reward,
            "n": len(accs),
            "mean": statistics.fmean(accs) if accs else None,
            "std": sample_std(accs) if accs else None,
            "values": {str(s): v for s, v in values.items()},
            "failed_seeds": failed,
            "best_steps": best_steps,
            "extras": {str(s): e for s, e in extras.items()},
        }

    ds = cfg.dataset
    summary = {
        "run_id": run_id,
        "setting": ds.setting,
        "protocol": ds.protocol,
        "protocol_label": ds.protocol_label,
        "generator": ds.generator,
        "n_test_per_class": ds.n_test_per_class,
        "seeds": cfg.seeds,
        "std_convention": "sample (n-1)",
        "methods": methods_summary,
    }
    (out / "metrics.jsonl").write_text("".join(line + "\n" for line in metrics_lines), encoding="utf-8")
    (out / "timings.jsonl").write_text("".join(line + "\n" for line in timing_lines), encoding="utf-8")
    summary = _clean(summary)
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    ok = any(m["n"] for m in methods_summary.values())
    return RunOutcome(EXIT_OK if ok else EXIT_ALL_FAILED, out, summary)
