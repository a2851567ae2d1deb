import sys

import numpy as np
import pytest

from transcf.dataset import Interaction, InteractionDataset, SplitDataset, leave_one_out_split
from transcf.embed import HyperParams, ModelState, Variant
from transcf.experiments import planted_split  # noqa: F401


def random_dataset(rng, n_users=15, n_items=25, lo=3, hi=8, ratings=False):
    users = [f"u{u}" for u in range(n_users)]
    items = [f"i{i}" for i in range(n_items)]
    recs = []
    t = 0
    for u in range(n_users):
        for i in rng.choice(n_items, size=int(rng.integers(lo, hi + 1)), replace=False):
            rating = float(rng.integers(1, 6)) if ratings else None
            recs.append(Interaction(users[u], items[i], rating, t))
            t += 1
    return InteractionDataset.from_records(recs, users, items)


def random_model(rng, ds, variant=Variant.TRANSCF, dim=8, scale=0.5, **hyper):
    hp = HyperParams(dim=dim, **hyper)
    m = ModelState.initialise(ds.n_users, ds.n_items, variant, hp, rng)
    m.alpha[:] = rng.normal(scale=scale, size=m.alpha.shape)
    m.beta[:] = rng.normal(scale=scale, size=m.beta.shape)
    return m


def random_split(rng, n_users=30, n_items=60, lo=2, hi=12):
    ds = random_dataset(rng, n_users, n_items, lo, hi)
    return leave_one_out_split(ds)


def as_lists(model):
    return model.alpha.tolist(), model.beta.tolist()


def memberships(ds):
    return [list(map(int, x)) for x in ds.user_items], [list(map(int, x)) for x in ds.item_users]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fd_gradient(model, ds, batch, h=1e-5, **kw):
    """Central finite differences of the batch objective w.r.t. every parameter."""
    from transcf.model import objective

    out = []
    for table in (model.alpha, model.beta):
        for idx in np.ndindex(table.shape):
            orig = table[idx]
            table[idx] = orig + h
            up = objective(model, ds, batch, **kw).total
            table[idx] = orig - h
            down = objective(model, ds, batch, **kw).total
            table[idx] = orig
            out.append((up - down) / (2 * h))
    return np.array(out)


def max_rel_error(analytic, numeric, floor=1e-4):
    """Largest coordinate-wise |a - n| / max(|a|, |n|, floor).

    The floor keeps coordinates whose true gradient is at the level of
    finite-difference roundoff (|J| * eps / h, about 1e-10 here) from
    dominating; below it the check is effectively absolute.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def hinge_margins(model, ds, batch):
    from transcf.model import score_pairs

    u, i, j = np.asarray(batch).T
    return model.hyper.margin - score_pairs(model, ds, u, i) + score_pairs(model, ds, u, j)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
