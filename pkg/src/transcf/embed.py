"""Embedding tables, model state, neighbourhood means and unit-ball projection."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import InteractionDataset

NORM_EPS = 1e-9


class NumericStateError(FloatingPointError):
    pass


class Variant(str, enum.Enum):
    TRANSCF = "transcf"
    TRANSCF_DOT = "transcf-dot"
    TRANSCF_ALT = "transcf-alt"
    CML = "cml"

    @classmethod
    def parse(cls, value) -> Variant:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        for v in cls:
            if v.value == key or v.name.lower().replace("_", "-") == key:
                return v
        raise ValueError(f"unknown variant {value!r}; expected one of {[v.value for v in cls]}")

    @property
    def is_metric(self) -> bool:
        return self is not Variant.TRANSCF_DOT

    @property
    def uses_neighbourhoods(self) -> bool:
        return self in (Variant.TRANSCF, Variant.TRANSCF_DOT)


@dataclass
class HyperParams:
    dim: int = 32
    learning_rate: float = 0.01
    margin: float = 0.5
    lambda_nbr: float = 0.01
    lambda_dist: float = 0.01
    epochs: int = 200
    negatives_per_user: int = 100
    batch_size: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.learning_rate < 0 or self.margin < 0 or self.lambda_nbr < 0 or self.lambda_dist < 0:
            raise ValueError("learning rate, margin and regularisation weights must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.negatives_per_user < 1:
            raise ValueError("batch_size, epochs and negatives_per_user must be >= 1")


@dataclass
class EmbeddingTable:
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("embedding table must be 2-d")

    @property
    def entity_count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def copy(self) -> EmbeddingTable:
        return EmbeddingTable(self.data.copy())


def project_rows(m: np.ndarray, strict_paper: bool = False) -> np.ndarray:
    """Pull every row of ``m`` (in place) back into the unit ball.

    Rows with squared norm above one are rescaled to unit length.  With
    ``strict_paper`` the divisor is ``max(1, ||v||^2)`` instead, which
    leaves such rows with norm ``1/||v||``.
    """
    if not np.isfinite(m).all():
        raise NumericStateError("non-finite embedding entry")
    sq = np.einsum("ij,ij->i", m, m)
    over = sq > 1.0
    if strict_paper:
        m[over] /= sq[over, None]
    else:
        m[over] /= np.sqrt(sq[over])[:, None]
    return m


def project_unit_ball(table: EmbeddingTable, strict_paper: bool = False) -> EmbeddingTable:
    project_rows(table.data, strict_paper)
    return table


def init_table(n: int, dim: int, rng: np.random.Generator) -> EmbeddingTable:
    bound = 1.0 / np.sqrt(dim)
    t = EmbeddingTable(rng.uniform(-bound, bound, size=(n, dim)))
    return project_unit_ball(t)


@dataclass
class ModelState:
    user_table: EmbeddingTable
    item_table: EmbeddingTable
    variant: Variant = Variant.TRANSCF
    hyper: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        if self.user_table.dim != self.item_table.dim:
            raise ValueError("user and item tables differ in dimension")

    @classmethod
    def initialise(cls, n_users: int, n_items: int, variant=Variant.TRANSCF,
                   hyper: HyperParams | None = None, rng: np.random.Generator | None = None) -> ModelState:
        hyper = hyper or HyperParams()
        rng = rng if rng is not None else np.random.default_rng(hyper.seed)
        users = init_table(n_users, hyper.dim, rng)
        items = init_table(n_items, hyper.dim, rng)
        return cls(users, items, variant, hyper)

    @property
    def dim(self) -> int:
        return self.user_table.dim

    @property
    def alpha(self) -> np.ndarray:
        return self.user_table.data

    @property
    def beta(self) -> np.ndarray:
        return self.item_table.data

    def copy(self) -> ModelState:
        return ModelState(self.user_table.copy(), self.item_table.copy(), self.variant, self.hyper)


def neighborhood_user(model: ModelState, ds: InteractionDataset, u: int) -> np.ndarray:
    """Mean item embedding over the user's training items; zeros if there are none."""
    nbrs = ds.user_items[u]
    if len(nbrs) == 0:
        return np.zeros(model.dim)
    return model.beta[nbrs].mean(axis=0)


def neighborhood_item(model: ModelState, ds: InteractionDataset, i: int) -> np.ndarray:
    nbrs = ds.item_users[i]
    if len(nbrs) == 0:
        return np.zeros(model.dim)
    return model.alpha[nbrs].mean(axis=0)


def user_neighbourhoods(model: ModelState, ds: InteractionDataset, users=None) -> np.ndarray:
    """Neighbourhood means for ``users`` (all users when None) in one sparse product."""
    op = ds.user_mean if users is None else ds.user_mean[users]
    return np.asarray(op @ model.beta)


def item_neighbourhoods(model: ModelState, ds: InteractionDataset, items=None) -> np.ndarray:
    op = ds.item_mean if items is None else ds.item_mean[items]
    return np.asarray(op @ model.alpha)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def table_lines(tokens: Sequence[str], data: np.ndarray) -> list[str]:
    return ["\t".join([tok, *map(_fmt, row)]) + "\n" for tok, row in zip(tokens, data)]


def write_table(path, tokens: Sequence[str], table: EmbeddingTable) -> None:
    Path(path).write_text("".join(table_lines(tokens, table.data)), encoding="utf-8")


def parse_table_lines(lines: Sequence[str]) -> tuple[list[str], EmbeddingTable]:
    tokens, rows = [], []
    for line in lines:
        line = line.rstrip("\n")
        if not line:
            continue
        tok, *vals = line.split("\t")
        tokens.append(tok)
        rows.append([float(v) for v in vals])
    dims = {len(r) for r in rows}
    if len(dims) > 1:
        raise ValueError("ragged embedding table")
    data = np.array(rows, dtype=np.float64).reshape(len(rows), dims.pop() if dims else 0)
    return tokens, EmbeddingTable(data)


def read_table(path) -> tuple[list[str], EmbeddingTable]:
    return parse_table_lines(Path(path).read_text(encoding="utf-8").splitlines())
