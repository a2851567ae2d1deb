"""Variant comparison: grid-select on validation, then retrain over several seeds."""
from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import TranslationDiagnostic, translation_check
from .dataset import Interaction, InteractionDataset, SplitDataset
from .embed import Variant
from .evaluation import evaluate
from .trainer import GridResult, SEARCH_GRID, TrainConfig, grid_search, train

# plain CML carries neither regulariser
CML_GRID = {**SEARCH_GRID, "lambda_nbr": [0.0], "lambda_dist": [0.0]}


def default_grid(variant: Variant) -> dict:
    return CML_GRID if variant is Variant.CML else SEARCH_GRID


@dataclass
class SeedRun:
    seed: int
    test_hr10: float
    diagnostic: TranslationDiagnostic | None = None


@dataclass
class VariantResult:
    variant: Variant
    chosen: TrainConfig
    grid: GridResult
    runs: list[SeedRun] = field(default_factory=list)

    @property
    def mean_hr10(self) -> float:
        return statistics.fmean(r.test_hr10 for r in self.runs)


def run_variant(split: SplitDataset, variant: Variant, grid: dict, base: TrainConfig | None = None,
                seeds=range(5), jobs: int = 1, diagnose: bool = False) -> VariantResult:
    """Pick hyper-parameters on validation HR@10, then report test HR@10 per seed."""
    base = replace(base or TrainConfig(), variant=variant)
    res = grid_search(split, grid, base, jobs=jobs)
    out = VariantResult(variant, res.best, res)
    for seed in seeds:
        cfg = replace(res.best, hyper=replace(res.best.hyper, seed=int(seed)))
        model, _ = train(split, cfg)
        hr = evaluate(model, split, "test", cfg.eval).hr[10]
        diag = translation_check(model, split, seed=int(seed)) if diagnose and variant is not Variant.CML else None
        out.runs.append(SeedRun(int(seed), hr, diag))
    return out


def planted_split(seed: int, n_users: int = 20, n_items: int = 40) -> SplitDataset:
    """Two taste clusters; every user holds out one in-cluster item for testing.

    Users interact with all of their cluster except the held-out item.  There is
    no validation set, so training keeps the final epoch.
    """
    rng = np.random.default_rng(seed)
    users = [f"u{u}" for u in range(n_users)]
    items = [f"i{i}" for i in range(n_items)]
    half_u, half_i = n_users // 2, n_items // 2
    recs, test = [], {}
    for u in range(n_users):
        c = u // half_u
        cluster = np.arange(half_i) + half_i * c
        held = int(cluster[(u % half_u) * 2 + rng.integers(2)])
        test[u] = held
        recs += [Interaction(users[u], items[i]) for i in cluster if i != held]
    return SplitDataset(InteractionDataset.from_records(recs, users, items), {}, test)
