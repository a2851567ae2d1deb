import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transcf.dataset import (
    EmptyDatasetError,
    Interaction,
    InteractionDataset,
    ParseError,
    leave_one_out_split,
    load_interactions,
    load_split,
    parse_lines,
    sample_negatives,
    sample_triples,
    write_split,
)

from conftest import random_dataset


def write(tmp_path, text, name="log.tsv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_min_count_boundary(tmp_path):
    # one user with five distinct items: users clear min_count=5, items never do
    p = write(tmp_path, "".join(f"a\ti{k}\n" for k in range(5)))
    ds = load_interactions(p, min_count=1)
    assert (ds.n_users, ds.n_items) == (1, 5)
    with pytest.raises(EmptyDatasetError):
        load_interactions(p, min_count=5)


def test_min_count_iterates_to_fixpoint(tmp_path):
    # i_rare has 2 users; dropping it pushes user "b" below 2 in a second round
    lines = ["a\tx\n", "a\ty\n", "a\ti_rare\n", "c\tx\n", "c\ty\n", "b\ti_rare\n", "b\tz\n"]
    ds = load_interactions(write(tmp_path, "".join(lines)), min_count=2)
    assert sorted(ds.users) == ["a", "c"]
    assert sorted(ds.items) == ["x", "y"]
    for u in range(ds.n_users):
        assert len(ds.user_items[u]) >= 2
    for i in range(ds.n_items):
        assert len(ds.item_users[i]) >= 2


def test_duplicates_collapse(tmp_path):
    ds = load_interactions(write(tmp_path, "u1,i1,3\nu1,i1,5\n"), min_count=1)
    assert ds.n_interactions == 1
    assert ds.ratings[0] == 5.0


def test_dense_ids_first_appearance(tmp_path):
    ds = load_interactions(write(tmp_path, "b\ty\na\tx\nb\tx\n"), min_count=1)
    assert ds.users == ["b", "a"]
    assert ds.items == ["y", "x"]


def test_header_and_order_key(tmp_path):
    ds = load_interactions(write(tmp_path, "user\titem\trating\tts\nu\ti\t4\t99\nu\tj\t\t7\n"), min_count=1)
    assert ds.n_interactions == 2
    assert list(ds.order_keys) == [99, 7]
    assert np.isnan(ds.ratings[1])


def test_order_key_defaults_to_position():
    recs = parse_lines(["u,a\n", "u,b\n", "u,c\n"])
    assert [r.order_key for r in recs] == [0, 1, 2]


@pytest.mark.parametrize("bad", ["u\n", "u\ti\tx\t1\n", "u\ti\t1\t2\t3\n", "\ti\n"])
def test_parse_error_names_line(bad):
    with pytest.raises(ParseError) as exc:
        parse_lines(["u\ti\n", bad], "f.tsv")
    assert "f.tsv:2" in str(exc.value)


def test_interaction_requires_tokens():
    with pytest.raises(ValueError):
        Interaction("", "i")


def test_transpose_consistency(rng):
    ds = random_dataset(rng, 20, 30)
    rebuilt = [set() for _ in range(ds.n_items)]
    for u, items in enumerate(ds.user_items):
        for i in items:
            rebuilt[i].add(u)
    assert rebuilt == [set(x.tolist()) for x in ds.item_users]
    assert sum(map(len, ds.user_items)) == sum(map(len, ds.item_users)) == ds.n_interactions


def test_split_definition():
    recs = [Interaction("u", f"i{k}", None, k) for k in (1, 2, 3, 4)]
    recs.append(Interaction("v", "i1", None, 0))
    recs.append(Interaction("v", "i2", None, 1))
    split = leave_one_out_split(InteractionDataset.from_records(recs))
    tr = split.train
    u, v = tr.user_index["u"], tr.user_index["v"]
    assert [tr.items[i] for i in tr.user_items[u]] == ["i1", "i2"]
    assert tr.items[split.validation[u]] == "i3"
    assert tr.items[split.test[u]] == "i4"
    assert v not in split.test and v not in split.validation
    assert len(tr.user_items[v]) == 2


def test_split_uses_order_key_not_file_position():
    recs = [Interaction("u", "late", None, 50), Interaction("u", "a", None, 1),
            Interaction("u", "b", None, 2), Interaction("u", "mid", None, 10)]
    split = leave_one_out_split(InteractionDataset.from_records(recs))
    items = split.train.items
    assert items[split.test[0]] == "late"
    assert items[split.validation[0]] == "mid"


def test_split_counts_match_enumeration(rng):
    ds = random_dataset(rng, 40, 30, lo=1, hi=6)
    split = leave_one_out_split(ds)
    per_user = {}
    for u in ds.pair_users:
        per_user[int(u)] = per_user.get(int(u), 0) + 1
    assert len(split.test) == sum(1 for c in per_user.values() if c >= 3)
    assert len(split.validation) == len(split.test)
    assert split.train.n_interactions == ds.n_interactions - 2 * len(split.test)


def test_split_soundness(rng):
    split = leave_one_out_split(random_dataset(rng, 40, 30, lo=1, hi=10))
    for u, t in split.test.items():
        train_items = set(split.train.user_items[u].tolist())
        assert t not in train_items
        assert split.validation[u] not in train_items
        assert t != split.validation[u]


def test_split_roundtrip(tmp_path, rng):
    ds = random_dataset(rng, 20, 30, ratings=True)
    split = leave_one_out_split(ds)
    write_split(split, tmp_path)
    back = load_split(tmp_path)
    tr, tb = split.train, back.train
    assert tb.n_interactions == tr.n_interactions
    for u, i in split.test.items():
        assert tb.items[back.test[tb.user_index[tr.users[u]]]] == tr.items[i]
    pairs = {(tr.users[u], tr.items[i]) for u, i in zip(tr.pair_users, tr.pair_items)}
    pairs_back = {(tb.users[u], tb.items[i]) for u, i in zip(tb.pair_users, tb.pair_items)}
    assert pairs == pairs_back


def test_triple_count():
    ds = random_dataset(np.random.default_rng(0), 10, 30)
    sample = sample_triples(ds, 100, np.random.default_rng(1))
    assert len(sample) == 1000 and sample.skipped == 0


def test_user_with_every_item_is_skipped():
    recs = [Interaction("full", f"i{k}") for k in range(4)] + [Interaction("x", "i0")]
    ds = InteractionDataset.from_records(recs)
    sample = sample_triples(ds, 10, np.random.default_rng(0))
    assert sample.skipped == 1
    assert len(sample) == 10
    assert set(sample.triples[:, 0]) == {ds.user_index["x"]}


def test_sampling_validity_exhaustive(rng):
    ds = random_dataset(rng, 25, 20, lo=1, hi=15)
    sample = sample_triples(ds, 50, rng)
    for u, i, j in sample.triples:
        members = set(ds.user_items[u].tolist())
        assert i in members and j not in members


def test_sampling_deterministic():
    ds = random_dataset(np.random.default_rng(3), 12, 20)
    a = sample_triples(ds, 30, np.random.default_rng(9)).triples
    b = sample_triples(ds, 30, np.random.default_rng(9)).triples
    assert np.array_equal(a, b)


def test_negative_draws_uniform():
    positives = np.array([0, 3, 4, 9, 17, 18, 19])
    n_items, draws = 40, 100_000
    j = sample_negatives(positives, n_items, draws, np.random.default_rng(2024))
    counts = np.bincount(j, minlength=n_items)
    assert counts[positives].sum() == 0
    allowed = np.setdiff1d(np.arange(n_items), positives)
    expected = draws / len(allowed)
    sigma = np.sqrt(draws * (1 / len(allowed)) * (1 - 1 / len(allowed)))
    # per-cell 3 sigma is loose enough for 33 cells at a fixed seed
    assert np.all(np.abs(counts[allowed] - expected) <= 3 * sigma)
    chi2 = float(((counts[allowed] - expected) ** 2 / expected).sum())
    df = len(allowed) - 1
    assert abs(chi2 - df) <= 3 * np.sqrt(2 * df)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 29), min_size=0, max_size=29, unique=True), st.integers(0, 2**32 - 1))
def test_complement_sampler_never_hits_positives(pos, seed):
    positives = np.array(sorted(pos), dtype=np.int64)
    j = sample_negatives(positives, 30, 200, np.random.default_rng(seed))
    assert not np.isin(j, positives).any()
    assert j.min() >= 0 and j.max() < 30
