"""Interaction ingestion, neighbor indexes, leave-one-out split and triple sampling."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

_logger = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Base class for ingestion problems."""


class ParseError(DatasetError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class EmptyDatasetError(DatasetError):
    pass


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    rating: float | None = None
    order_key: int | None = None

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise DatasetError("user_id and item_id must be non-empty")


class TrainTriple(NamedTuple):
    user: int
    pos: int
    neg: int


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def parse_lines(lines: Iterable[str], path="<input>") -> list[Interaction]:
    """Parse ``user<sep>item[<sep>rating][<sep>order_key]`` records.

    The separator is a tab when the line contains one, otherwise a comma.
    An empty rating field is allowed (``u<TAB>i<TAB><TAB>7``).  A missing
    order key defaults to the record's 0-based position among data lines.
    """
    out: list[Interaction] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        sep = "\t" if "\t" in line else ","
        fields = [f.strip() for f in line.split(sep)]
        if lineno == 1 and len(fields) >= 3 and fields[2] and not _is_number(fields[2]):
            continue  # header
        if len(fields) < 2 or len(fields) > 4:
            raise ParseError(path, lineno, f"expected 2-4 fields, got {len(fields)}")
        user, item = fields[0], fields[1]
        if not user or not item:
            raise ParseError(path, lineno, "empty user or item token")
        rating = None
        if len(fields) >= 3 and fields[2]:
            try:
                rating = float(fields[2])
            except ValueError:
                raise ParseError(path, lineno, f"bad rating {fields[2]!r}") from None
        order = len(out)
        if len(fields) == 4 and fields[3]:
            try:
                order = int(fields[3])
            except ValueError:
                raise ParseError(path, lineno, f"bad order key {fields[3]!r}") from None
        out.append(Interaction(user, item, rating, order))
    return out


def read_interactions(path) -> list[Interaction]:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        return parse_lines(f, path)


def dedup(records: Sequence[Interaction]) -> list[Interaction]:
    """Collapse duplicate (user, item) pairs; the last record wins.

    The surviving record takes the position of the first occurrence so the
    first-appearance id order is unaffected.
    """
    slot: dict[tuple[str, str], int] = {}
    out: list[Interaction] = []
    for r in records:
        key = (r.user_id, r.item_id)
        if key in slot:
            out[slot[key]] = r
        else:
            slot[key] = len(out)
            out.append(r)
    return out


def filter_min_count(records: Sequence[Interaction], min_count: int) -> list[Interaction]:
    """Drop users and items with fewer than ``min_count`` interactions, repeated to a fixpoint."""
    recs = list(records)
    while True:
        ucount: dict[str, int] = {}
        icount: dict[str, int] = {}
        for r in recs:
            ucount[r.user_id] = ucount.get(r.user_id, 0) + 1
            icount[r.item_id] = icount.get(r.item_id, 0) + 1
        kept = [r for r in recs if ucount[r.user_id] >= min_count and icount[r.item_id] >= min_count]
        if len(kept) == len(recs):
            return kept
        recs = kept


@dataclass(eq=False)
class InteractionDataset:
    """Implicit-feedback records over a dense id space.

    ``user_items[u]`` and ``item_users[i]`` are sorted int arrays.  The id
    space (``users``/``items`` token lists) may contain entities without any
    interaction, e.g. items only seen in held-out data.
    """

    users: list[str]
    items: list[str]
    pair_users: np.ndarray
    pair_items: np.ndarray
    ratings: np.ndarray  # float, NaN where absent
    order_keys: np.ndarray
    user_items: list[np.ndarray] = field(init=False, repr=False)
    item_users: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.user_index = {t: k for k, t in enumerate(self.users)}
        self.item_index = {t: k for k, t in enumerate(self.items)}
        nu, ni = len(self.users), len(self.items)
        self.adjacency = sp.csr_matrix(
            (np.ones(len(self.pair_users)), (self.pair_users, self.pair_items)), shape=(nu, ni)
        )
        self.adjacency.sum_duplicates()
        if self.adjacency.nnz != len(self.pair_users):
            raise DatasetError("duplicate (user, item) pairs in dataset")
        self.adjacency.sort_indices()
        t = self.adjacency.T.tocsr()
        t.sort_indices()
        a = self.adjacency
        self.user_items = [a.indices[a.indptr[u]:a.indptr[u + 1]] for u in range(nu)]
        self.item_users = [t.indices[t.indptr[i]:t.indptr[i + 1]] for i in range(ni)]
        # row-normalised operators: user_mean @ B gives every user's neighbourhood mean
        self.user_mean = _row_normalise(a)
        self.item_mean = _row_normalise(t)

    @classmethod
    def from_records(cls, records: Sequence[Interaction], users: Sequence[str] | None = None,
                     items: Sequence[str] | None = None) -> InteractionDataset:
        users = list(users) if users is not None else []
        items = list(items) if items is not None else []
        uidx = {t: k for k, t in enumerate(users)}
        iidx = {t: k for k, t in enumerate(items)}
        records = dedup(records)
        pu, pi, rat, order = [], [], [], []
        for r in records:
            if r.user_id not in uidx:
                uidx[r.user_id] = len(users)
                users.append(r.user_id)
            if r.item_id not in iidx:
                iidx[r.item_id] = len(items)
                items.append(r.item_id)
            pu.append(uidx[r.user_id])
            pi.append(iidx[r.item_id])
            rat.append(np.nan if r.rating is None else r.rating)
            order.append(r.order_key if r.order_key is not None else len(order))
        return cls(users, items, np.asarray(pu, dtype=np.int64), np.asarray(pi, dtype=np.int64),
                   np.asarray(rat, dtype=float), np.asarray(order, dtype=np.int64))

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_interactions(self) -> int:
        return len(self.pair_users)

    @property
    def has_ratings(self) -> bool:
        return bool(len(self.ratings)) and not np.isnan(self.ratings).all()

    def records(self) -> list[Interaction]:
        return [
            Interaction(self.users[u], self.items[i], None if np.isnan(r) else float(r), int(o))
            for u, i, r, o in zip(self.pair_users, self.pair_items, self.ratings, self.order_keys)
        ]

    def rating_of(self, u: int, i: int) -> float:
        hit = np.flatnonzero((self.pair_users == u) & (self.pair_items == i))
        return float(self.ratings[hit[0]]) if len(hit) else float("nan")

    def subset(self, mask: np.ndarray) -> InteractionDataset:
        """Same id space, restricted to the interactions selected by ``mask``."""
        return InteractionDataset(list(self.users), list(self.items), self.pair_users[mask],
                                  self.pair_items[mask], self.ratings[mask], self.order_keys[mask])


def _row_normalise(m: sp.csr_matrix) -> sp.csr_matrix:
    deg = np.asarray(m.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return sp.csr_matrix(sp.diags(inv) @ m)


def load_interactions(path, min_count: int = 5) -> InteractionDataset:
    if min_count < 1:
        raise ValueError("min_count must be positive")
    records = filter_min_count(dedup(read_interactions(path)), min_count)
    if not records:
        raise EmptyDatasetError(f"{path}: no interactions left after min_count={min_count} filtering")
    return InteractionDataset.from_records(records)


@dataclass(eq=False)
class SplitDataset:
    train: InteractionDataset
    validation: dict[int, int]
    test: dict[int, int]
    # (which, user) -> (rating, order_key) of the held-out record, kept for writing
    held_meta: dict[tuple[str, int], tuple[float | None, int | None]] = field(default_factory=dict, repr=False)

    def known_items(self, u: int) -> np.ndarray:
        """Every item the user is known to have interacted with."""
        extra = [d[u] for d in (self.validation, self.test) if u in d]
        return np.union1d(self.train.user_items[u], np.asarray(extra, dtype=np.int64))

    def held_out(self, which: str) -> dict[int, int]:
        if which == "validation":
            return self.validation
        if which == "test":
            return self.test
        raise ValueError(f"unknown held-out split {which!r}")


def leave_one_out_split(ds: InteractionDataset) -> SplitDataset:
    if ds.n_interactions == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    keep = np.ones(ds.n_interactions, dtype=bool)
    validation: dict[int, int] = {}
    test: dict[int, int] = {}
    meta = {}
    order = np.lexsort((ds.order_keys, ds.pair_users))
    bounds = np.searchsorted(ds.pair_users[order], np.arange(ds.n_users + 1))
    for u in range(ds.n_users):
        rows = order[bounds[u]:bounds[u + 1]]
        if len(rows) < 3:
            continue
        for which, row, held in (("test", rows[-1], test), ("validation", rows[-2], validation)):
            held[u] = int(ds.pair_items[row])
            r = ds.ratings[row]
            meta[(which, u)] = (None if np.isnan(r) else float(r), int(ds.order_keys[row]))
        keep[rows[-2:]] = False
    return SplitDataset(ds.subset(keep), validation, test, meta)


@dataclass
class TripleSample:
    triples: np.ndarray  # (n, 3) int64 rows of (user, pos, neg)
    skipped: int = 0

    def __len__(self):
        return len(self.triples)

    def __iter__(self):
        return (TrainTriple(*map(int, t)) for t in self.triples)


def sample_negatives(positives: np.ndarray, n_items: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws (with replacement) from ``range(n_items)`` minus the sorted ``positives``."""
    r = rng.integers(n_items - len(positives), size=size)
    # r-th element of the complement: shift by the number of positives at or below it
    gaps = positives - np.arange(len(positives))
    return r + np.searchsorted(gaps, r, side="right")


def sample_triples(ds: InteractionDataset, per_user: int, rng: np.random.Generator,
                   users: Iterable[int] | None = None) -> TripleSample:
    if per_user < 1:
        raise ValueError("per_user must be positive")
    chunks = []
    skipped = 0
    for u in range(ds.n_users) if users is None else users:
        pos = ds.user_items[u]
        if len(pos) == 0:
            continue
        if len(pos) >= ds.n_items:
            skipped += 1
            continue
        i = pos[rng.integers(len(pos), size=per_user)]
        j = sample_negatives(pos, ds.n_items, per_user, rng)
        chunks.append(np.column_stack([np.full(per_user, u), i, j]))
    if skipped:
        _logger.warning("skipped %d users without negative items", skipped)
    triples = np.concatenate(chunks).astype(np.int64) if chunks else np.empty((0, 3), dtype=np.int64)
    return TripleSample(triples, skipped)


def format_records(records: Iterable[Interaction]) -> list[str]:
    lines = []
    for r in records:
        rating = "" if r.rating is None else repr(r.rating)
        lines.append(f"{r.user_id}\t{r.item_id}\t{rating}\t{r.order_key}\n")
    return lines


def write_split(split: SplitDataset, outdir) -> dict[str, Path]:
    """Write train/validation/test files in the ingestion format."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    tr = split.train
    full = {}
    for which in ("validation", "test"):
        recs = []
        for u, i in split.held_out(which).items():
            recs.append(Interaction(tr.users[u], tr.items[i], *split.held_meta.get((which, u), (None, None))))
        full[which] = recs
    paths = {}
    for name, recs in (("train", tr.records()), *full.items()):
        p = outdir / f"{name}.tsv"
        p.write_text("".join(format_records(recs)), encoding="utf-8")
        paths[name] = p
    return paths


def load_split(splitdir) -> SplitDataset:
    """Rebuild a split written by :func:`write_split`.

    Ids are assigned by first appearance over train, then validation, then test.
    """
    splitdir = Path(splitdir)
    parts = {}
    for name in ("train", "validation", "test"):
        p = splitdir / f"{name}.tsv"
        if not p.exists():
            raise FileNotFoundError(p)
        parts[name] = read_interactions(p)
    users: list[str] = []
    items: list[str] = []
    seen_u: set[str] = set()
    seen_i: set[str] = set()
    for name in ("train", "validation", "test"):
        for r in parts[name]:
            if r.user_id not in seen_u:
                seen_u.add(r.user_id)
                users.append(r.user_id)
            if r.item_id not in seen_i:
                seen_i.add(r.item_id)
                items.append(r.item_id)
    train = InteractionDataset.from_records(parts["train"], users, items)
    held = {}
    for name in ("validation", "test"):
        held[name] = {train.user_index[r.user_id]: train.item_index[r.item_id] for r in parts[name]}
    meta = {
        (name, train.user_index[r.user_id]): (r.rating, r.order_key)
        for name in ("validation", "test") for r in parts[name]
    }
    return SplitDataset(train, held["validation"], held["test"], meta)
