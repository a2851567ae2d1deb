"""Diagnostics on learned translation vectors and labelled vector export."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .dataset import InteractionDataset, SplitDataset
from .embed import ModelState, Variant
from .model import NeighbourhoodCache, pair_translations, score_pairs


class UnsupportedVariantError(ValueError):
    pass


class UnsupportedDatasetError(ValueError):
    pass


@dataclass
class RatingGroup:
    rating: float
    count: int
    satisfied_pct: float
    share_pct: float


@dataclass
class TranslationDiagnostic:
    observed_pct: float
    unobserved_pct: float
    n_observed: int
    n_unobserved: int
    rating_groups: dict[float, RatingGroup] = field(default_factory=dict)

    def to_json(self) -> str:
        body = asdict(self)
        body["rating_groups"] = {repr(k): asdict(g) for k, g in self.rating_groups.items()}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


def translated_closer(model: ModelState, ds: InteractionDataset, users, items,
                      cache: NeighbourhoodCache | None = None) -> np.ndarray:
    """Boolean mask: translation strictly shortens the user-item distance.

    The translated distance is read off the model's own score for metric
    variants; for the dot-product variant it is computed from the residual.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    diff = model.alpha[users] - model.beta[items]
    plain = np.einsum("ij,ij->i", diff, diff)
    if model.variant.is_metric:
        translated = -score_pairs(model, ds, users, items, cache)
    else:
        res = diff + pair_translations(model, ds, users, items, cache)
        translated = np.einsum("ij,ij->i", res, res)
    return plain > translated


def _require_translation(model: ModelState):
    if model.variant is Variant.CML:
        raise UnsupportedVariantError("CML has no translation vectors")


def _train_and_known(data):
    if isinstance(data, SplitDataset):
        return data.train, data.known_items
    return data, lambda u: data.user_items[u]


def sample_unobserved(data, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """For each user, as many non-interacted items as the user has training items.

    Drawn without replacement when the pool is large enough, with replacement otherwise.
    """
    ds, known = _train_and_known(data)
    us, its = [], []
    for u in range(ds.n_users):
        n = len(ds.user_items[u])
        if n == 0:
            continue
        pool = np.setdiff1d(np.arange(ds.n_items), known(u), assume_unique=True)
        if len(pool) == 0:
            continue
        picked = rng.choice(pool, size=n, replace=len(pool) < n)
        us.append(np.full(n, u))
        its.append(picked)
    if not us:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(us), np.concatenate(its)


def _pct(mask: np.ndarray) -> float:
    return 100.0 * float(mask.mean()) if len(mask) else 0.0


def translation_check(model: ModelState, data, seed: int = 0) -> TranslationDiagnostic:
    """Share of observed vs. sampled unobserved pairs where translation brings the user closer."""
    _require_translation(model)
    ds, _ = _train_and_known(data)
    cache = NeighbourhoodCache(model, ds)
    obs = translated_closer(model, ds, ds.pair_users, ds.pair_items, cache)
    uu, ui = sample_unobserved(data, np.random.default_rng(seed))
    unobs = translated_closer(model, ds, uu, ui, cache)
    return TranslationDiagnostic(_pct(obs), _pct(unobs), len(obs), len(unobs))


def rating_group_check(model: ModelState, data) -> dict[float, RatingGroup]:
    _require_translation(model)
    ds, _ = _train_and_known(data)
    if not ds.has_ratings:
        raise UnsupportedDatasetError("dataset carries no ratings")
    rated = ~np.isnan(ds.ratings)
    ok = translated_closer(model, ds, ds.pair_users[rated], ds.pair_items[rated])
    ratings = ds.ratings[rated]
    out = {}
    for r in np.unique(ratings):
        sel = ratings == r
        out[float(r)] = RatingGroup(float(r), int(sel.sum()), _pct(ok[sel]), 100.0 * sel.sum() / len(ratings))
    return out


EXPORT_KINDS = ("translation", "difference")


def export_labeled_translations(model: ModelState, ds: InteractionDataset, labels: Mapping[tuple, str],
                                path, kind: str = "translation") -> int:
    """Write ``label<TAB>v1..vK`` rows for labelled observed pairs.

    ``labels`` maps (user token, item token) to a label.  ``kind`` selects the
    exported vector: the model's translation, or the plain embedding difference
    ``alpha_u - beta_i`` (the stand-in used for models without translations).
    Returns the number of labels skipped because the pair is unknown or unobserved.
    """
    if kind not in EXPORT_KINDS:
        raise ValueError(f"kind must be one of {EXPORT_KINDS}")
    if kind == "translation":
        _require_translation(model)
    users, items, tags, skipped = [], [], [], 0
    for (ut, it), label in labels.items():
        u, i = ds.user_index.get(ut), ds.item_index.get(it)
        if u is None or i is None or i not in set(ds.user_items[u].tolist()):
            skipped += 1
            continue
        users.append(u)
        items.append(i)
        tags.append(str(label))
    if kind == "translation":
        vecs = pair_translations(model, ds, users, items) if users else np.empty((0, model.dim))
    else:
        vecs = model.alpha[users] - model.beta[items]
    header = "label\t" + "\t".join(f"v{k + 1}" for k in range(model.dim)) + "\n"
    rows = ["\t".join([t, *(format(float(x), ".17g") for x in v)]) + "\n" for t, v in zip(tags, vecs)]
    Path(path).write_text(header + "".join(rows), encoding="utf-8")
    return skipped


def read_labels(path) -> dict[tuple[str, str], str]:
    """Labels file: ``user<TAB>item<TAB>label`` per line."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"bad label line {line!r}")
        out[(parts[0], parts[1])] = parts[2]
    return out
