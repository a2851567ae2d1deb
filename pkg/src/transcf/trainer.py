"""Mini-batch SGD training, checkpoint selection and grid search."""
from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import SplitDataset, sample_triples
from .embed import HyperParams, ModelState, NumericStateError, Variant, project_rows
from .evaluation import EvalConfig, candidate_sets, evaluate
from .model import gradients, reg_dist_value, reg_nbr_value

_logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, detail: str = ""):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    hyper: HyperParams = field(default_factory=HyperParams)
    variant: Variant = Variant.TRANSCF
    projection_cadence: str = "per_epoch"
    stop_gradient_neighborhoods: bool = False
    skip_empty_neighborhoods: bool = False
    strict_paper_projection: bool = False
    early_stop_patience: int = 10
    eval: EvalConfig = field(default_factory=EvalConfig)
    threads: int = 1

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        if self.projection_cadence not in ("per_epoch", "per_batch"):
            raise ValueError("projection_cadence must be 'per_epoch' or 'per_batch'")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")

    @property
    def max_epochs(self) -> int:
        return self.hyper.epochs


@dataclass
class EpochRecord:
    epoch: int
    objective: float
    reg_nbr: float
    reg_dist: float
    val_hr10: float
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_hr10: float = -math.inf

    FIELDS = ("epoch", "objective", "reg_nbr", "reg_dist", "val_hr10")

    def write_csv(self, path, timings_path=None) -> None:
        """Write the deterministic columns; wall-clock seconds go to ``timings_path`` if given."""
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(self.FIELDS)
            for r in self.records:
                w.writerow([r.epoch, repr(r.objective), repr(r.reg_nbr), repr(r.reg_dist), repr(r.val_hr10)])
        if timings_path is not None:
            with open(timings_path, "w", newline="", encoding="utf-8") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(["epoch", "seconds"])
                for r in self.records:
                    w.writerow([r.epoch, f"{r.seconds:.6f}"])


def _sgd_step(model: ModelState, ds, batch, cfg: TrainConfig):
    g = gradients(model, ds, batch, cfg.stop_gradient_neighborhoods, cfg.skip_empty_neighborhoods)
    eta = model.hyper.learning_rate
    model.alpha[...] -= eta * g.users
    model.beta[...] -= eta * g.items
    if cfg.projection_cadence == "per_batch":
        project_rows(model.alpha, cfg.strict_paper_projection)
        project_rows(model.beta, cfg.strict_paper_projection)
    return g.loss.total


def run_epoch(model: ModelState, split: SplitDataset, cfg: TrainConfig, rng: np.random.Generator,
              epoch: int = 0) -> float:
    """One pass: resample triples, shuffle, SGD per batch, project.  Returns the mean batch objective."""
    ds = split.train
    h = model.hyper
    triples = sample_triples(ds, h.negatives_per_user, rng).triples
    triples = triples[rng.permutation(len(triples))]
    batches = [triples[k:k + h.batch_size] for k in range(0, len(triples), h.batch_size)]

    def step(k: int) -> float:
        try:
            loss = _sgd_step(model, ds, batches[k], cfg)
        except NumericStateError as e:
            raise TrainingDiverged(epoch, k, str(e)) from e
        if not math.isfinite(loss):
            raise TrainingDiverged(epoch, k, "non-finite objective")
        return loss

    if cfg.threads > 1:
        # lock-free: workers update the shared tables without coordination
        with ThreadPoolExecutor(cfg.threads) as ex:
            losses = list(ex.map(step, range(len(batches))))
    else:
        losses = [step(k) for k in range(len(batches))]
    try:
        project_rows(model.alpha, cfg.strict_paper_projection)
        project_rows(model.beta, cfg.strict_paper_projection)
    except NumericStateError as e:
        raise TrainingDiverged(epoch, len(batches) - 1, str(e)) from e
    return float(np.mean(losses)) if losses else 0.0


def train(split: SplitDataset, cfg: TrainConfig, model: ModelState | None = None,
          callback=None) -> tuple[ModelState, TrainLog]:
    """Train and return the parameters with the best validation HR@10.

    Initialisation, sampling and shuffling all draw from one generator seeded
    with ``cfg.hyper.seed``; validation candidates come from ``cfg.eval.seed``.
    """
    ds = split.train
    if ds.n_interactions == 0:
        raise ValueError("empty training set")
    h = cfg.hyper
    rng = np.random.default_rng(h.seed)
    if model is None:
        model = ModelState.initialise(ds.n_users, ds.n_items, cfg.variant, h, rng)
    cands = candidate_sets(split, "validation", cfg.eval) if split.validation else None
    log = TrainLog()
    best = model.copy()
    since_best = 0
    for epoch in range(h.epochs):
        t0 = time.perf_counter()
        obj = run_epoch(model, split, cfg, rng, epoch)
        rn = reg_nbr_value(model, ds, skip_empty=cfg.skip_empty_neighborhoods)
        rd = reg_dist_value(model, ds)
        hr = evaluate(model, split, "validation", cfg.eval, cands).hr.get(10, math.nan) if cands else math.nan
        rec = EpochRecord(epoch, obj, rn, rd, hr, time.perf_counter() - t0)
        log.records.append(rec)
        _logger.info("epoch %d obj %.5f reg_nbr %.4f reg_dist %.4f val HR@10 %.4f", epoch, obj, rn, rd, hr)
        if callback is not None:
            callback(model, rec)
        if cands is None:
            # nothing to select on: keep the latest parameters
            log.best_epoch = epoch
            best = model.copy()
        elif hr > log.best_hr10:
            log.best_hr10, log.best_epoch = hr, epoch
            best = model.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                _logger.info("early stop after epoch %d (best %d)", epoch, log.best_epoch)
                break
    return best, log


@dataclass
class GridResult:
    best: TrainConfig
    cells: list[tuple[TrainConfig, float]]
    models: list[ModelState | None] = field(default_factory=list, repr=False)

    @property
    def best_score(self) -> float:
        return max(s for _, s in self.cells)


GRID_KEYS = ("dim", "learning_rate", "margin", "lambda_nbr", "lambda_dist")

SEARCH_GRID = {
    "dim": [8, 16, 32, 64, 128],
    "learning_rate": [0.0005, 0.001, 0.005, 0.01, 0.05, 0.1],
    "margin": [0.0, 0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
    "lambda_nbr": [0.0, 0.001, 0.01, 0.1],
    "lambda_dist": [0.0, 0.001, 0.01, 0.1],
}


def grid_cells(base: TrainConfig, grids: dict[str, Sequence]) -> list[TrainConfig]:
    unknown = set(grids) - set(GRID_KEYS)
    if unknown:
        raise ValueError(f"unknown grid keys {sorted(unknown)}")
    keys = [k for k in GRID_KEYS if k in grids]
    if any(len(grids[k]) == 0 for k in keys):
        raise ValueError("empty grid")
    return [replace(base, hyper=replace(base.hyper, **dict(zip(keys, vals))))
            for vals in itertools.product(*(grids[k] for k in keys))]


def grid_search(split: SplitDataset, grids: dict[str, Sequence], base: TrainConfig | None = None,
                jobs: int = 1, keep_models: bool = False) -> GridResult:
    """Train one model per grid cell and pick the best validation HR@10.

    Ties go to the earliest cell.  A cell whose training raises scores -inf.
    """
    base = base or TrainConfig()
    cells = grid_cells(base, grids)

    def run(cfg: TrainConfig):
        try:
            model, log = train(split, cfg)
        except (TrainingDiverged, FloatingPointError, ValueError) as e:
            _logger.warning("grid cell %s failed: %s", cfg.hyper, e)
            return -math.inf, None
        return log.best_hr10, model

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            results = list(ex.map(run, cells))
    else:
        results = [run(c) for c in cells]
    scores = [s for s, _ in results]
    k = int(np.argmax(scores))  # first maximum
    models = [m for _, m in results] if keep_models else []
    return GridResult(cells[k], list(zip(cells, scores)), models)


def write_grid_csv(result: GridResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([*GRID_KEYS, "val_hr10"])
        for cfg, s in result.cells:
            w.writerow([getattr(cfg.hyper, k) for k in GRID_KEYS] + [repr(s)])
