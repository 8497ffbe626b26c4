"""Full-batch training, evaluation, epoch timing and lambda sweeps."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import metrics as mt
from .errors import ConfigError, NumericalError
from .graph import DatasetBundle, SplitMasks, make_extreme_split, split_random
from .losses import class_priors, gate_targets, imbalance_loss, total_loss
from .model import GateMode, Model, ModelConfig, fast_gate_table, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    epochs: int = 200
    lr: float = 1e-3
    weight_decay: float = 5e-4
    seed: int = 0
    early_stop_patience: int = 50
    # "auto" uses the bundle's stored masks if present, else a seeded 60/20/20 split
    split: str = "auto"
    extreme_classes: tuple = ()
    extreme_k: int = 5

    def __post_init__(self):
        object.__setattr__(self, "extreme_classes", tuple(int(c) for c in self.extreme_classes))
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.split not in ("auto", "stored", "random"):
            raise ConfigError(f"split must be auto, stored or random; got {self.split!r}")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["extreme_classes"] = list(self.extreme_classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


@dataclass
class History:
    train_loss: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    val_macro_f1: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def same_trajectory(self, other: "History") -> bool:
        """Equality of everything except wall-clock times."""
        return (
            self.train_loss == other.train_loss
            and self.val_accuracy == other.val_accuracy
            and self.val_macro_f1 == other.val_macro_f1
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_accuracy", "val_macro_f1", "seconds"])
            for i in range(len(self)):
                w.writerow(
                    [i, repr(self.train_loss[i]), repr(self.val_accuracy[i]), repr(self.val_macro_f1[i]), f"{self.seconds[i]:.6f}"]
                )


def prepare_masks(bundle: DatasetBundle, cfg: TrainConfig) -> SplitMasks:
    if cfg.split == "stored" or (cfg.split == "auto" and bundle.masks is not None):
        if bundle.masks is None:
            raise ConfigError(f"dataset {bundle.name!r} has no stored masks")
        masks = bundle.masks
    else:
        masks = split_random(bundle.graph, (0.6, 0.2, 0.2), seed=cfg.seed)
    if cfg.extreme_classes:
        masks = make_extreme_split(bundle.graph, masks, cfg.extreme_classes, cfg.extreme_k, seed=cfg.seed)
    return masks


class Trainer:
    """State of one training run; ``step`` performs one full-batch epoch."""

    def __init__(self, bundle: DatasetBundle, cfg: TrainConfig):
        self.bundle = bundle
        self.cfg = cfg
        graph = bundle.graph
        self.masks = prepare_masks(bundle, cfg)
        mcfg = cfg.model
        self.train_idx = np.flatnonzero(self.masks.train)
        self.val_idx = np.flatnonzero(self.masks.val)
        self.labels = graph.labels
        self.counts = class_priors(graph.labels, self.masks.train, graph.n_classes).source_counts
        self.gate_table = None
        if mcfg.gate_mode is GateMode.FAST:
            self.gate_table = fast_gate_table(graph, self.masks, mcfg.epsilon, mcfg.homophily_source)
        self.model = Model(graph, mcfg, self.gate_table)
        self.store = init_params(mcfg, cfg.seed)
        self.gate_slots, self.gate_target = gate_targets(
            graph.edge_sources, graph.csr_neighbors, graph.labels, self.masks.train
        )

    def loss(self, result) -> ad.Tensor:
        mcfg = self.cfg.model
        logits_tr = ad.select_rows(result.logits, self.train_idx)
        l_im = imbalance_loss(mcfg.loss_kind, logits_tr, self.labels[self.train_idx], self.counts, mcfg.tau)
        gate_losses = []
        if mcfg.gate_mode is GateMode.LEARNED and mcfg.lam > 0 and self.gate_slots.size:
            gate_losses = [
                ad.bce_with_logits(ad.select_rows(z, self.gate_slots), self.gate_target)
                for z in result.gate_logits
            ]
        return total_loss(mcfg, l_im, gate_losses)

    def step(self):
        """Forward, backward and one Adam update; returns ``(loss, logits)``.

        The logits belong to the parameters *before* the update.
        """
        self.store.zero_grad()
        with ad.Tape() as tape:
            result = self.model.forward(self.store)
            loss = self.loss(result)
        ad.backward(tape, loss, self.store)
        snapshot = result.logits.value
        return loss.item(), snapshot

    def update(self) -> None:
        ad.adam_step(self.store, self.cfg.lr, self.cfg.weight_decay)

    def logits(self) -> np.ndarray:
        return self.model.forward(self.store).logits.value


@dataclass
class TrainResult:
    trainer: Trainer
    params: ad.ParamStore
    history: History
    best_epoch: int

    @property
    def model(self) -> Model:
        return self.trainer.model

    @property
    def masks(self) -> SplitMasks:
        return self.trainer.masks


def train(bundle: DatasetBundle, cfg: TrainConfig) -> TrainResult:
    """Train with early stopping on validation macro-F1.

    Returns the parameters of the best validation epoch (latest on ties).
    """
    tr = Trainer(bundle, cfg)
    hist = History()
    m = bundle.graph.n_classes
    val_truth = tr.labels[tr.val_idx]
    best_f1, best_epoch, best_params = -1.0, -1, None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        try:
            loss, logits = tr.step()
            if not np.isfinite(loss):
                raise NumericalError("non-finite loss")
        except NumericalError as e:
            raise NumericalError(f"training diverged at epoch {epoch}: {e}") from e
        pred = logits[tr.val_idx].argmax(axis=1)
        val_acc = mt.accuracy(pred, val_truth) if tr.val_idx.size else 0.0
        val_f1 = mt.macro_f1(pred, val_truth, m) if tr.val_idx.size else 0.0
        # ties go to the later, longer-trained snapshot
        if val_f1 >= best_f1:
            best_f1, best_epoch, best_params = val_f1, epoch, tr.store.copy_params()
        try:
            tr.update()
        except NumericalError as e:
            raise NumericalError(f"training diverged at epoch {epoch}: {e}") from e
        hist.train_loss.append(loss)
        hist.val_accuracy.append(val_acc)
        hist.val_macro_f1.append(val_f1)
        hist.seconds.append(time.perf_counter() - t0)
        if epoch - best_epoch >= cfg.early_stop_patience:
            break
    tr.store.load_params(best_params)
    return TrainResult(tr, tr.store, hist, best_epoch)


def evaluate(model: Model, store: ad.ParamStore, mask) -> mt.MetricsReport:
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        raise ValueError("cannot evaluate on an empty mask")
    logits = model.forward(store).logits.value[idx]
    return mt.report(logits, model.graph.labels[idx], model.graph.n_classes)


def run_metrics(result: TrainResult) -> dict:
    """Validation and test metrics of a finished run, as plain JSON data."""
    out = {"best_epoch": result.best_epoch, "epochs_run": len(result.history)}
    for split in ("val", "test"):
        mask = getattr(result.masks, split)
        out[split] = evaluate(result.model, result.params, mask).to_dict() if mask.any() else None
    return out


def mean_metrics(reports: Sequence[dict], split: str = "test") -> dict:
    keys = ("accuracy", "macro_f1", "auc_ovr_macro")
    vals = {k: [r[split][k] for r in reports] for k in keys}
    return {
        **{k: float(np.mean(v)) for k, v in vals.items()},
        **{f"{k}_std": float(np.std(v)) for k, v in vals.items()},
    }


def run_seeds(bundle: DatasetBundle, cfg: TrainConfig, seeds: Iterable[int]) -> List[dict]:
    return [run_metrics(train(bundle, replace(cfg, seed=s))) for s in seeds]


def benchmark_epoch_time(
    bundle: DatasetBundle,
    cfgs: Dict[str, TrainConfig],
    warmup: int = 1,
    epochs: int = 5,
    out_csv=None,
) -> List[dict]:
    """Mean and std wall-clock seconds of a training epoch per configuration.

    Gate tables and other one-off preparation happen before timing starts.
    """
    if epochs < 3:
        raise ConfigError("need at least 3 measured epochs")
    rows = []
    for name, cfg in cfgs.items():
        tr = Trainer(bundle, cfg)
        times = []
        for i in range(warmup + epochs):
            t0 = time.perf_counter()
            tr.step()
            tr.update()
            dt = time.perf_counter() - t0
            if i >= warmup:
                times.append(dt)
        rows.append({"model": name, "mean_s_per_epoch": float(np.mean(times)), "std": float(np.std(times))})
        log.info("%s: %.4f s/epoch", name, rows[-1]["mean_s_per_epoch"])
    if out_csv is not None:
        write_rows(out_csv, rows, ["model", "mean_s_per_epoch", "std"])
    return rows


def lambda_sweep(
    bundle: DatasetBundle,
    cfg: TrainConfig,
    lambdas: Sequence[float],
    seeds: Sequence[int] = (0,),
    out_csv=None,
) -> List[dict]:
    """Seed-averaged test metrics for each gate-loss weight."""
    if cfg.model.gate_mode is not GateMode.LEARNED:
        raise ConfigError("lambda sweeps need the learned gate")
    rows = []
    for lam in lambdas:
        c = replace(cfg, model=replace(cfg.model, lam=float(lam)))
        rows.append({"lambda": float(lam), **mean_metrics(run_seeds(bundle, c, seeds))})
    if out_csv is not None:
        write_rows(out_csv, rows, list(rows[0]) if rows else ["lambda"])
    return rows


def write_rows(path, rows: List[dict], columns: List[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
