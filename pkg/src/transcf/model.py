"""Translations, scores, loss terms and their analytic gradients.

:func:`score` and :func:`translation` work on one pair; the ``*_pairs``
functions and :func:`objective` are their vectorised counterparts.
:func:`gradients` is written separately against the same definitions and
is checked against finite differences of :func:`objective`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import InteractionDataset, TrainTriple
from .embed import (
    ModelState,
    NumericStateError,
    Variant,
    item_neighbourhoods,
    neighborhood_item,
    neighborhood_user,
    user_neighbourhoods,
)


@dataclass
class ScoreBreakdown:
    score: float
    translation: np.ndarray
    residual: np.ndarray


@dataclass
class LossTerms:
    hinge: float
    reg_nbr: float
    reg_dist: float
    total: float


@dataclass
class Gradients:
    users: np.ndarray
    items: np.ndarray
    loss: LossTerms | None = None

    def flat(self) -> np.ndarray:
        return np.concatenate([self.users.ravel(), self.items.ravel()])


def translation(model: ModelState, ds: InteractionDataset, u: int, i: int) -> np.ndarray:
    v = model.variant
    if v is Variant.CML:
        return np.zeros(model.dim)
    if v is Variant.TRANSCF_ALT:
        return model.alpha[u] * model.beta[i]
    return neighborhood_user(model, ds, u) * neighborhood_item(model, ds, i)


def score_breakdown(model: ModelState, ds: InteractionDataset, u: int, i: int) -> ScoreBreakdown:
    r = translation(model, ds, u, i)
    res = model.alpha[u] + r - model.beta[i]
    if model.variant.is_metric:
        s = -float(res @ res)
    else:
        s = float((model.alpha[u] + r) @ model.beta[i])
    return ScoreBreakdown(s, r, res)


def score(model: ModelState, ds: InteractionDataset, u: int, i: int) -> float:
    return score_breakdown(model, ds, u, i).score


def hinge_term(model: ModelState, ds: InteractionDataset, triple) -> float:
    u, i, j = triple
    return max(0.0, model.hyper.margin - score(model, ds, u, i) + score(model, ds, u, j))


def reg_nbr_value(model: ModelState, ds: InteractionDataset, users=None, items=None,
                  skip_empty: bool = False) -> float:
    """Squared distance of every entity to its neighbourhood mean.

    ``users``/``items`` restrict the sum (the whole id space when None).
    An entity without neighbours is compared with the zero vector unless
    ``skip_empty`` is set.
    """
    users = np.arange(ds.n_users) if users is None else np.asarray(users, dtype=np.int64)
    items = np.arange(ds.n_items) if items is None else np.asarray(items, dtype=np.int64)
    du = model.alpha[users] - user_neighbourhoods(model, ds, users)
    di = model.beta[items] - item_neighbourhoods(model, ds, items)
    if skip_empty:
        du[np.diff(ds.user_mean.indptr)[users] == 0] = 0.0
        di[np.diff(ds.item_mean.indptr)[items] == 0] = 0.0
    return float(np.sum(du * du) + np.sum(di * di))


def reg_dist_value(model: ModelState, ds: InteractionDataset, pairs=None) -> float:
    """Sum of squared translated distances over positive pairs (all training pairs when None)."""
    if pairs is None:
        u, i = ds.pair_users, ds.pair_items
    else:
        u, i = np.asarray(pairs, dtype=np.int64).reshape(-1, 2).T
    res = pair_residuals(model, ds, u, i)
    return float(np.sum(res * res))


def batch_entities(batch: np.ndarray):
    """Users, items and positive pairs touched by a batch (each listed once, sorted)."""
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    users = np.unique(batch[:, 0])
    items = np.unique(batch[:, 1:])
    pairs = np.unique(batch[:, :2], axis=0)
    return users, items, pairs


def objective(model: ModelState, ds: InteractionDataset, batch, skip_empty: bool = False) -> LossTerms:
    """Batch objective: hinge over the triples plus both regularisers restricted to the batch."""
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    if len(batch) == 0:
        raise ValueError("empty batch")
    h = model.hyper
    u, i, j = batch.T
    cache = NeighbourhoodCache(model, ds) if model.variant.uses_neighbourhoods else None
    hinge = np.maximum(0.0, h.margin - score_pairs(model, ds, u, i, cache) + score_pairs(model, ds, u, j, cache))
    hinge = float(hinge.sum())
    users, items, pairs = batch_entities(batch)
    rn = reg_nbr_value(model, ds, users, items, skip_empty)
    rd = reg_dist_value(model, ds, pairs)
    return LossTerms(hinge, rn, rd, hinge + h.lambda_nbr * rn + h.lambda_dist * rd)


class NeighbourhoodCache:
    """Neighbourhood means for every user and item at one parameter snapshot.

    Only valid until the next parameter update; used for evaluation.
    """

    def __init__(self, model: ModelState, ds: InteractionDataset):
        self.user = user_neighbourhoods(model, ds)
        self.item = item_neighbourhoods(model, ds)


def pair_translations(model: ModelState, ds: InteractionDataset, users, items,
                      cache: NeighbourhoodCache | None = None) -> np.ndarray:
    users = np.asarray(users)
    items = np.asarray(items)
    v = model.variant
    if v is Variant.CML:
        return np.zeros((len(users), model.dim))
    if v is Variant.TRANSCF_ALT:
        return model.alpha[users] * model.beta[items]
    if cache is None:
        cache = NeighbourhoodCache(model, ds)
    return cache.user[users] * cache.item[items]


def pair_residuals(model: ModelState, ds: InteractionDataset, users, items,
                   cache: NeighbourhoodCache | None = None) -> np.ndarray:
    """Rows of ``alpha_u + r_ui - beta_i``."""
    users = np.asarray(users)
    items = np.asarray(items)
    return model.alpha[users] + pair_translations(model, ds, users, items, cache) - model.beta[items]


def score_pairs(model: ModelState, ds: InteractionDataset, users, items,
                cache: NeighbourhoodCache | None = None) -> np.ndarray:
    """Vectorised :func:`score` over aligned ``users``/``items`` arrays."""
    users = np.asarray(users)
    items = np.asarray(items)
    r = pair_translations(model, ds, users, items, cache)
    a = model.alpha[users] + r
    if model.variant.is_metric:
        res = a - model.beta[items]
        return -np.einsum("ij,ij->i", res, res)
    return np.einsum("ij,ij->i", a, model.beta[items])


class _BatchView:
    """Parameters and neighbourhood means for the rows a batch touches."""

    def __init__(self, model: ModelState, ds: InteractionDataset, users, items):
        self.model = model
        self.users = users
        self.items = items
        self.anbr = user_neighbourhoods(model, ds, users)
        self.bnbr = item_neighbourhoods(model, ds, items)
        self.g_anbr = np.zeros_like(self.anbr)
        self.g_bnbr = np.zeros_like(self.bnbr)

    def pos(self, u, i):
        return np.searchsorted(self.users, u), np.searchsorted(self.items, i)

    def metric(self, u, i):
        """Squared translated distance and its partials w.r.t. a, b, anbr, bnbr."""
        m = self.model
        a, b = m.alpha[u], m.beta[i]
        pu, pi = self.pos(u, i)
        an, bn = self.anbr[pu], self.bnbr[pi]
        zero = np.zeros_like(a)
        if m.variant is Variant.CML:
            r = zero
        elif m.variant is Variant.TRANSCF_ALT:
            r = a * b
        else:
            r = an * bn
        v = 2.0 * (a + r - b)
        da, db, dan, dbn = v.copy(), -v, zero, zero
        if m.variant is Variant.TRANSCF_ALT:
            da = da + v * b
            db = db + v * a
        elif m.variant.uses_neighbourhoods:
            dan = v * bn
            dbn = v * an
        return 0.25 * np.einsum("ij,ij->i", v, v), (da, db, dan, dbn)

    def score(self, u, i):
        """Score and its partials w.r.t. a, b, anbr, bnbr."""
        if self.model.variant.is_metric:
            d, parts = self.metric(u, i)
            return -d, tuple(-p for p in parts)
        a, b = self.model.alpha[u], self.model.beta[i]
        pu, pi = self.pos(u, i)
        an, bn = self.anbr[pu], self.bnbr[pi]
        r = an * bn
        return np.einsum("ij,ij->i", a + r, b), (b, a + r, b * bn, b * an)

    def accumulate(self, g: Gradients, u, i, parts, coef):
        da, db, dan, dbn = parts
        c = coef[:, None]
        pu, pi = self.pos(u, i)
        np.add.at(g.users, u, c * da)
        np.add.at(g.items, i, c * db)
        np.add.at(self.g_anbr, pu, c * dan)
        np.add.at(self.g_bnbr, pi, c * dbn)


def gradients(model: ModelState, ds: InteractionDataset, batch, stop_gradient: bool = False,
              skip_empty: bool = False) -> Gradients:
    """Gradient of :func:`objective` for ``batch`` w.r.t. both embedding tables.

    Neighbourhood means are differentiated through, so a triple also moves
    the neighbours of its user and items unless ``stop_gradient`` is set.
    The hinge contributes nothing at or below its kink.
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    if len(batch) == 0:
        raise ValueError("empty batch")
    h = model.hyper
    users, items, pairs = batch_entities(batch)
    view = _BatchView(model, ds, users, items)
    g = Gradients(np.zeros_like(model.alpha), np.zeros_like(model.beta))
    u, i, j = batch.T

    s_pos, d_pos = view.score(u, i)
    s_neg, d_neg = view.score(u, j)
    margins = h.margin - s_pos + s_neg
    active = (margins > 0).astype(float)
    view.accumulate(g, u, i, d_pos, -active)
    view.accumulate(g, u, j, d_neg, active)

    pu, pi = pairs.T
    dist, d_dist = view.metric(pu, pi)
    if h.lambda_dist:
        view.accumulate(g, pu, pi, d_dist, np.full(len(pu), h.lambda_dist))

    du = model.alpha[users] - view.anbr
    di = model.beta[items] - view.bnbr
    if skip_empty:
        du[np.diff(ds.user_mean.indptr)[users] == 0] = 0.0
        di[np.diff(ds.item_mean.indptr)[items] == 0] = 0.0
    if h.lambda_nbr:
        g.users[users] += 2.0 * h.lambda_nbr * du
        g.items[items] += 2.0 * h.lambda_nbr * di
        view.g_anbr -= 2.0 * h.lambda_nbr * du
        view.g_bnbr -= 2.0 * h.lambda_nbr * di

    if not stop_gradient:
        g.items += ds.user_mean[users].T @ view.g_anbr
        g.users += ds.item_mean[items].T @ view.g_bnbr

    hinge = float(np.maximum(margins, 0.0).sum())
    rn = float(np.sum(du * du) + np.sum(di * di))
    rd = float(dist.sum())
    g.loss = LossTerms(hinge, rn, rd, hinge + h.lambda_nbr * rn + h.lambda_dist * rd)

    if not (np.isfinite(g.users).all() and np.isfinite(g.items).all()):
        bad = ~(np.isfinite(s_pos) & np.isfinite(s_neg))
        k = int(np.argmax(bad)) if bad.any() else 0
        raise NumericStateError(f"non-finite gradient (triple {TrainTriple(*map(int, batch[k]))})")
    return g
