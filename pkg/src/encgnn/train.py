"""Adam optimization, the training loop, multi-seed repetition, grid search
and timing measurement.

Training is full batch. Each epoch samples a fresh labelled-node partition
(when the gradient-consistency weight is active), runs one train-mode forward
feeding every loss term, backpropagates, and applies Adam with two parameter
groups: the GNN layer weights and the opening/closing dense layers, each with
its own learning rate and weight decay.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .backbones import Model, ModelConfig, forward, init_model
from .data import Dataset, Split
from .losses import LossWeights, sample_partition, total_loss

REGULARIZERS = ("tv", "tv_basic", "preg")
PARTITION_POLICIES = ("random", "fixed")


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class Hyperparams:
    lr_gnn: float = 0.01
    lr_oc: float = 0.01
    wd_gnn: float = 0.0
    wd_oc: float = 0.0
    channels: int = 64
    dropout: float = 0.5
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    lam: float = 2.0
    sigma: float = 10.0
    layers: int = 2
    backbone: str = "gcn"
    max_epochs: int = 1500
    patience: int = 100
    seed: int = 0
    regularizer: str = "tv"
    partition_policy: str = "random"

    def __post_init__(self):
        if self.lr_gnn <= 0 or self.lr_oc <= 0:
            raise ValueError("learning rates must be positive")
        if self.wd_gnn < 0 or self.wd_oc < 0:
            raise ValueError("weight decays must be non-negative")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}")
        if self.partition_policy not in PARTITION_POLICIES:
            raise ValueError(f"partition_policy must be one of {PARTITION_POLICIES}")

    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta, gamma=self.gamma,
                           lam=self.lam, sigma=self.sigma,
                           tv_edge_aware=self.regularizer != "tv_basic")

    def model_config(self, in_channels: int, classes: int) -> ModelConfig:
        return ModelConfig(backbone=self.backbone, num_layers=self.layers,
                           hidden=self.channels, classes=classes,
                           in_channels=in_channels, dropout=self.dropout)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class TrainResult:
    best_val_acc: float
    test_acc_at_best_val: float
    best_epoch: int
    epochs_run: int
    curves: dict[str, list[float]]
    median_train_ms: float
    median_eval_ms: float
    model: Model = None

    def curve(self, key: str) -> list[float]:
        return self.curves[key]


CURVE_KEYS = ("l_total", "l_ce", "l_mi", "l_tv", "l_cvg",
              "train_acc", "val_acc", "test_acc", "val_loss",
              "train_ms", "eval_ms")


# ---------------------------------------------------------------------------
# Adam

class AdamState:
    def __init__(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state: AdamState, lr: float, wd: float,
              betas=(0.9, 0.999), eps: float = 1e-8, t: int = 1) -> None:
    """Classic Adam with bias correction; weight decay enters the gradient."""
    if t < 1:
        raise ValueError("step counter t starts at 1")
    b1, b2 = betas
    for i, (p, g) in enumerate(zip(params, grads)):
        g = g + wd * p.data
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / (1 - b1 ** t)
        v_hat = state.v[i] / (1 - b2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# evaluation helpers

def accuracy(logits: np.ndarray, y: np.ndarray, ids: np.ndarray) -> float:
    if ids.size == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits[ids], axis=1) == y[ids]))


def _val_ce(logits: np.ndarray, y: np.ndarray, ids: np.ndarray) -> float:
    if ids.size == 0:
        return float("nan")
    shifted = logits[ids] - logits[ids].max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-np.mean(log_probs[np.arange(ids.size), y[ids]]))


# ---------------------------------------------------------------------------
# training loop

def train(dataset: Dataset, split: Split, config: ModelConfig, hp: Hyperparams,
          metrics_path=None) -> TrainResult:
    """Train one model; deterministic given (dataset, split, config, hp)."""
    init_ss, drop_ss, part_ss = np.random.SeedSequence(hp.seed).spawn(3)
    init_rng = np.random.default_rng(init_ss)
    drop_rng = np.random.default_rng(drop_ss)
    part_rng = np.random.default_rng(part_ss)

    model = init_model(config, init_rng)
    params = [t for _, t in model.parameters()]
    gnn_params = [t for _, t in model.gnn_parameters()]
    oc_params = [t for _, t in model.oc_parameters()]
    gnn_state = AdamState(gnn_params)
    oc_state = AdamState(oc_params)

    weights = hp.loss_weights()
    use_preg = hp.regularizer == "preg"
    x, y = dataset.x, dataset.y
    g = dataset.graph
    train_ids = split.train

    fixed_part = None
    if weights.gamma > 0 and hp.partition_policy == "fixed":
        fixed_part = sample_partition(train_ids, part_rng)

    curves: dict[str, list[float]] = {k: [] for k in CURVE_KEYS}
    best_val, best_loss, best_epoch, best_test = -1.0, float("inf"), -1, 0.0
    since_improved = 0
    epochs_run = 0

    writer = None
    fh = None
    if metrics_path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(metrics_path)), exist_ok=True)
        fh = open(metrics_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_total", "l_ce", "l_mi", "l_tv", "l_cvg",
                         "train_acc", "val_acc", "test_acc", "epoch_ms"])

    try:
        for epoch in range(1, hp.max_epochs + 1):
            t0 = time.perf_counter()
            part = None
            if weights.gamma > 0:
                part = fixed_part if fixed_part is not None else sample_partition(train_ids, part_rng)

            tape = Tape()
            with ad.active_tape(tape):
                total, breakdown, _ = total_loss(
                    model, g, x, y, train_ids, weights, part=part,
                    mode="train", rng=drop_rng, preg_instead_of_tv=use_preg)
                total_val = total.item()
                if not np.isfinite(total_val):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}: total={total_val}, "
                        f"breakdown={breakdown}, hp={hp.as_dict()}")
                grads = ad.backward(tape, total, params)

            grad_arrays = {p.tape_id: grads[p.tape_id].data for p in params}
            adam_step(gnn_params, [grad_arrays[p.tape_id] for p in gnn_params],
                      gnn_state, hp.lr_gnn, hp.wd_gnn, t=epoch)
            adam_step(oc_params, [grad_arrays[p.tape_id] for p in oc_params],
                      oc_state, hp.lr_oc, hp.wd_oc, t=epoch)
            train_ms = (time.perf_counter() - t0) * 1000.0

            t1 = time.perf_counter()
            logits = forward(model, g, x, mode="eval").data
            eval_ms = (time.perf_counter() - t1) * 1000.0

            train_acc = accuracy(logits, y, train_ids)
            val_acc = accuracy(logits, y, split.val)
            test_acc = accuracy(logits, y, split.test)
            val_loss = _val_ce(logits, y, split.val)

            curves["l_total"].append(total_val)
            curves["l_ce"].append(breakdown["ce"])
            curves["l_mi"].append(breakdown["mi"])
            curves["l_tv"].append(breakdown["tv"])
            curves["l_cvg"].append(breakdown["cvg"])
            curves["train_acc"].append(train_acc)
            curves["val_acc"].append(val_acc)
            curves["test_acc"].append(test_acc)
            curves["val_loss"].append(val_loss)
            curves["train_ms"].append(train_ms)
            curves["eval_ms"].append(eval_ms)
            if writer is not None:
                writer.writerow([epoch, total_val, breakdown["ce"], breakdown["mi"],
                                 breakdown["tv"], breakdown["cvg"],
                                 train_acc, val_acc, test_acc,
                                 train_ms + eval_ms])
            epochs_run = epoch

            # higher val accuracy wins; ties break on lower val loss, then
            # the earlier epoch
            improved = val_acc > best_val or (val_acc == best_val and val_loss < best_loss)
            if improved:
                best_val, best_loss, best_epoch, best_test = val_acc, val_loss, epoch, test_acc
                since_improved = 0
            else:
                since_improved += 1
                if since_improved >= hp.patience:
                    break
    finally:
        if fh is not None:
            fh.close()

    for _, p in model.parameters():
        p.tape = None
        p.tape_id = None

    warm = 5 if epochs_run > 10 else 0
    return TrainResult(
        best_val_acc=best_val,
        test_acc_at_best_val=best_test,
        best_epoch=best_epoch,
        epochs_run=epochs_run,
        curves=curves,
        median_train_ms=float(np.median(curves["train_ms"][warm:])),
        median_eval_ms=float(np.median(curves["eval_ms"][warm:])),
        model=model,
    )


# ---------------------------------------------------------------------------
# repetition, search, timing

@dataclass
class RepeatedResult:
    mean: float
    std: float
    per_seed: list[tuple[int, TrainResult]] = field(default_factory=list)


def _train_for_seed(args):
    dataset, split, hp, seed, metrics_path = args
    hp_seed = replace(hp, seed=seed)
    config = hp_seed.model_config(dataset.num_features, dataset.num_classes)
    return seed, train(dataset, split, config, hp_seed, metrics_path=metrics_path)


def run_repeated(dataset: Dataset, split: Split, hp: Hyperparams, seeds,
                 jobs: int = 1, out_dir=None) -> RepeatedResult:
    """Train once per seed and aggregate test accuracy at best validation."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("seeds list is empty")
    tasks = []
    for s in seeds:
        metrics_path = None
        if out_dir is not None:
            metrics_path = os.path.join(out_dir, f"metrics-seed{s}.csv")
        tasks.append((dataset, split, hp, s, metrics_path))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_for_seed, tasks))
    else:
        results = [_train_for_seed(t) for t in tasks]

    results.sort(key=lambda r: seeds.index(r[0]))
    accs = np.array([r.test_acc_at_best_val for _, r in results])
    return RepeatedResult(float(accs.mean()), float(accs.std()), results)


@dataclass
class GridRecord:
    hp: Hyperparams
    val_acc: float
    test_acc: float
    failed: bool = False
    error: str = ""


def grid_search(dataset: Dataset, split: Split, grid, out_path=None) -> tuple[Hyperparams, list[GridRecord]]:
    """Exhaustive search over an iterable of Hyperparams.

    The best point maximizes validation accuracy; ties keep the earlier grid
    entry. Divergent configurations are recorded as failures and skipped.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    records: list[GridRecord] = []
    best: GridRecord | None = None
    for hp in grid:
        config = hp.model_config(dataset.num_features, dataset.num_classes)
        try:
            result = train(dataset, split, config, hp)
            rec = GridRecord(hp, result.best_val_acc, result.test_acc_at_best_val)
        except DivergenceError as exc:
            rec = GridRecord(hp, float("nan"), float("nan"), failed=True, error=str(exc))
        records.append(rec)
        if not rec.failed and (best is None or rec.val_acc > best.val_acc):
            best = rec
    if best is None:
        raise DivergenceError("every grid point diverged")

    if out_path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
        with open(out_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            keys = list(grid[0].as_dict())
            writer.writerow(keys + ["val_acc", "test_acc", "failed"])
            for rec in records:
                d = rec.hp.as_dict()
                writer.writerow([d[k] for k in keys] + [rec.val_acc, rec.test_acc, int(rec.failed)])
    return best.hp, records


@dataclass
class TimingRow:
    label: str
    train_ms: float
    eval_ms: float
    test_acc: float


def timing_report(dataset: Dataset, split: Split, configs, epochs: int = 60,
                  warmup: int = 5) -> list[TimingRow]:
    """Median per-epoch train/inference times over >= epochs - warmup epochs.

    configs is an iterable of (label, Hyperparams); early stopping is disabled
    so every run measures the same number of epochs.
    """
    if epochs - warmup < 50:
        raise ValueError("need at least 50 measured epochs after warm-up")
    rows = []
    for label, hp in configs:
        hp_run = replace(hp, max_epochs=epochs, patience=epochs + 1)
        config = hp_run.model_config(dataset.num_features, dataset.num_classes)
        result = train(dataset, split, config, hp_run)
        rows.append(TimingRow(
            label=label,
            train_ms=float(np.median(result.curves["train_ms"][warmup:])),
            eval_ms=float(np.median(result.curves["eval_ms"][warmup:])),
            test_acc=result.test_acc_at_best_val,
        ))
    return rows


# ---------------------------------------------------------------------------
# run artifacts

def write_summary_csv(path, rows) -> None:
    """rows: iterables of (config_hash, seed, best_val, test, runtime_s)."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "seed", "best_val", "test", "runtime_s"])
        for row in rows:
            writer.writerow(list(row))


def write_run_config(path, hp: Hyperparams, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, val in hp.as_dict().items():
            fh.write(f"{key}={val}\n")
        for key, val in (extra or {}).items():
            fh.write(f"{key}={val}\n")
