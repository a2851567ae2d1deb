"""Leave-one-out ranking evaluation: HR@N and NDCG@N over sampled candidates."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import SplitDataset
from .embed import ModelState
from .model import NeighbourhoodCache, score_pairs


@dataclass
class EvalConfig:
    candidate_negatives: int = 99
    cutoffs: tuple[int, ...] = (10, 20)
    seed: int = 0
    full_catalog: bool = False
    threads: int = 1

    def __post_init__(self):
        self.cutoffs = tuple(int(c) for c in self.cutoffs)
        if self.candidate_negatives < 1:
            raise ValueError("candidate_negatives must be >= 1")
        if list(self.cutoffs) != sorted(self.cutoffs) or not self.cutoffs:
            raise ValueError("cutoffs must be a non-empty ascending list")


@dataclass
class UserRecord:
    user: int
    item: int
    rank: int
    n_candidates: int
    short: bool = False  # fewer negatives available than requested


@dataclass
class EvalReport:
    hr: dict[int, float]
    ndcg: dict[int, float]
    users: list[UserRecord] = field(default_factory=list)

    def to_json(self) -> str:
        body = {
            "HR": {str(n): v for n, v in self.hr.items()},
            "NDCG": {str(n): v for n, v in self.ndcg.items()},
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def write_users_csv(self, path, split: SplitDataset | None = None) -> None:
        cutoffs = sorted(self.hr)
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["user", "item", "rank", "n_candidates", "short"]
                       + [f"HR@{n}" for n in cutoffs] + [f"NDCG@{n}" for n in cutoffs])
            for r in self.users:
                user = split.train.users[r.user] if split else r.user
                item = split.train.items[r.item] if split else r.item
                w.writerow([user, item, r.rank, r.n_candidates, int(r.short)]
                           + [hit_at(r.rank, n) for n in cutoffs]
                           + [repr(ndcg_at(r.rank, n)) for n in cutoffs])


def hit_at(rank: int, n: int) -> int:
    return int(rank <= n)


def ndcg_at(rank: int, n: int) -> float:
    return 1.0 / np.log2(rank + 1) if rank <= n else 0.0


def rank_from_scores(target_score: float, candidate_scores) -> int:
    """1 + number of candidates scoring strictly above the target."""
    return 1 + int(np.count_nonzero(np.asarray(candidate_scores) > target_score))


def rank_of(model: ModelState, split_or_ds, u: int, target: int, candidates, cache=None) -> int:
    ds = getattr(split_or_ds, "train", split_or_ds)
    candidates = np.asarray(candidates, dtype=np.int64)
    items = np.concatenate([[target], candidates])
    s = score_pairs(model, ds, np.full(len(items), u), items, cache)
    return rank_from_scores(s[0], s[1:])


def sample_candidates(split: SplitDataset, u: int, cfg: EvalConfig) -> tuple[np.ndarray, bool]:
    """Negatives for one user: items outside train, validation and test for that user.

    Deterministic in ``(cfg.seed, u)``.  Returns the candidates and whether
    fewer than requested were available.
    """
    pool = np.setdiff1d(np.arange(split.train.n_items), split.known_items(u), assume_unique=True)
    if cfg.full_catalog:
        return pool, False
    if len(pool) <= cfg.candidate_negatives:
        return pool, len(pool) < cfg.candidate_negatives
    rng = np.random.default_rng([cfg.seed, u])
    return np.sort(rng.choice(pool, size=cfg.candidate_negatives, replace=False)), False


def candidate_sets(split: SplitDataset, which: str, cfg: EvalConfig) -> dict[int, tuple[np.ndarray, bool]]:
    return {u: sample_candidates(split, u, cfg) for u in sorted(split.held_out(which))}


def summarise(records: list[UserRecord], cutoffs) -> EvalReport:
    ranks = np.array([r.rank for r in records], dtype=float)
    hr, nd = {}, {}
    for n in cutoffs:
        if len(ranks) == 0:
            hr[n] = nd[n] = 0.0
            continue
        # np.mean sums pairwise
        hr[n] = float(np.mean(ranks <= n))
        nd[n] = float(np.mean(np.where(ranks <= n, 1.0 / np.log2(ranks + 1), 0.0)))
    return EvalReport(hr, nd, records)


def evaluate(model: ModelState, split: SplitDataset, which: str = "test", cfg: EvalConfig | None = None,
             candidates: dict[int, tuple[np.ndarray, bool]] | None = None) -> EvalReport:
    """Rank every user's held-out item against their candidate negatives.

    ``candidates`` may be precomputed with :func:`candidate_sets` (the
    trainer does this once per run); they are sampled on the fly otherwise.
    """
    cfg = cfg or EvalConfig()
    held = split.held_out(which)
    if not held:
        raise ValueError(f"no held-out {which} items")
    if model.alpha.shape[0] != split.train.n_users or model.beta.shape[0] != split.train.n_items:
        raise ValueError("model and dataset sizes differ")
    cache = NeighbourhoodCache(model, split.train) if model.variant.uses_neighbourhoods else None
    users = sorted(held)

    def one(u: int) -> UserRecord:
        cands, short = candidates[u] if candidates is not None else sample_candidates(split, u, cfg)
        rank = rank_of(model, split.train, u, held[u], cands, cache)
        return UserRecord(u, held[u], rank, len(cands) + 1, short)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            records = list(ex.map(one, users))
    else:
        records = [one(u) for u in users]
    return summarise(records, cfg.cutoffs)
