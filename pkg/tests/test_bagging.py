"""Windowing, bag labels, splits, and the bag cache."""

from __future__ import annotations

import numpy as np
import pytest

from logmilp.bagging import (
    Bag,
    BagDataset,
    block_bags,
    read_bag_cache,
    sliding_bags,
    split_dataset,
    write_bag_cache,
)
from logmilp.errors import (
    CacheError,
    EmptyInput,
    InvalidWindow,
    MissingArtifact,
    TooFewBags,
)

# --- oracle ----------------------------------------------------------------


def window_oracle(n, W, s):
    """Expected (start, length) per bag, by direct enumeration: full windows
    at 0, s, 2s, ...; any rows past the last full window's end form one final
    partial bag."""
    spans = []
    start = 0
    while start + W <= n:
        spans.append((start, W))
        start += s
    covered = spans[-1][0] + W if spans else 0
    if covered < n:
        spans.append((covered, n - covered))
    return spans


def random_dataset(rng, n, d=5):
    emb = rng.standard_normal((n, d)).astype(np.float32)
    labels = (rng.random(n) < 0.2).astype(np.uint8)
    return emb, labels


# --- sliding windows -------------------------------------------------------


def test_sliding_spec_example_no_partial():
    # 10 instances, W=4, s=2: full windows at 0,2,4,6 cover everything.
    emb = np.zeros((10, 3), dtype=np.float32)
    ds = sliding_bags(emb, np.zeros(10, dtype=np.uint8), 4, 2)
    assert len(ds) == 4
    assert all(bag.valid_count == 4 for bag in ds.bags)


def test_sliding_spec_example_short_input():
    # 3 instances with W=4: a single partial bag with mask 1,1,1,0.
    emb = np.arange(12, dtype=np.float32).reshape(3, 4)
    ds = sliding_bags(emb, np.asarray([0, 1, 0], dtype=np.uint8), 4, 4)
    assert len(ds) == 1
    bag = ds.bags[0]
    assert bag.mask.tolist() == [1, 1, 1, 0]
    assert bag.bag_label == 1
    assert bag.instance_labels.tolist() == [0, 1, 0, 0]
    assert np.array_equal(bag.embeddings[:3], emb)
    assert not bag.embeddings[3].any()


def test_sliding_matches_oracle_on_random_shapes(rng):
    for _ in range(50):
        n = int(rng.integers(1, 120))
        W = int(rng.integers(1, 15))
        s = int(rng.integers(1, W + 1))
        emb, labels = random_dataset(rng, n)
        ds = sliding_bags(emb, labels, W, s)
        spans = window_oracle(n, W, s)
        assert len(ds) == len(spans)
        for bag, (start, length) in zip(ds.bags, spans):
            assert bag.valid_count == length
            assert bag.mask.tolist() == [1] * length + [0] * (W - length)
            assert np.array_equal(bag.embeddings[:length], emb[start : start + length])
            assert not bag.embeddings[length:].any()
            assert bag.instance_labels[:length].tolist() == labels[start : start + length].tolist()
            assert bag.bag_label == int(labels[start : start + length].max())
            assert bag.source_span == (start + 1, start + length)


def test_sliding_label_is_max_of_valid(rng):
    emb, _ = random_dataset(rng, 7)
    labels = np.asarray([0, 0, 0, 0, 0, 0, 1], dtype=np.uint8)
    ds = sliding_bags(emb, labels, 5, 5)
    assert [bag.bag_label for bag in ds.bags] == [0, 1]


def test_sliding_custom_line_numbers(rng):
    emb, labels = random_dataset(rng, 6)
    line_nos = np.asarray([10, 11, 13, 14, 20, 21], dtype=np.int64)
    ds = sliding_bags(emb, labels, 4, 4, line_nos)
    assert ds.bags[0].source_span == (10, 14)
    assert ds.bags[1].source_span == (20, 21)


@pytest.mark.parametrize("W,s", [(4, 5), (0, 1), (3, 0), (-1, -1)])
def test_sliding_invalid_window(W, s):
    emb = np.zeros((10, 2), dtype=np.float32)
    with pytest.raises(InvalidWindow):
        sliding_bags(emb, np.zeros(10, dtype=np.uint8), W, s)


def test_sliding_empty_input():
    with pytest.raises(EmptyInput):
        sliding_bags(np.zeros((0, 2), dtype=np.float32), np.zeros(0, dtype=np.uint8), 3, 3)


# --- block bags ------------------------------------------------------------


def test_block_bags_mean_pool_and_or_labels():
    emb = np.asarray(
        [[1.0, 0.0], [3.0, 0.0], [0.0, 2.0], [0.0, 4.0], [5.0, 5.0]],
        dtype=np.float32,
    )
    labels = np.asarray([0, 1, 0, 0, 0], dtype=np.uint8)
    ds = block_bags(emb, labels, block=2, per_bag=2)
    # blocks: mean([1,3])=2 | mean([2,4])=3 | singleton 5
    assert len(ds) == 2
    first = ds.bags[0]
    assert np.allclose(first.embeddings[0], [2.0, 0.0])
    assert np.allclose(first.embeddings[1], [0.0, 3.0])
    assert first.instance_labels.tolist() == [1, 0]
    assert first.bag_label == 1
    assert first.source_span == (1, 4)
    second = ds.bags[1]
    assert second.mask.tolist() == [1, 0]
    assert np.allclose(second.embeddings[0], [5.0, 5.0])
    assert second.source_span == (5, 5)


def test_block_bags_invalid():
    emb = np.zeros((4, 2), dtype=np.float32)
    with pytest.raises(InvalidWindow):
        block_bags(emb, np.zeros(4, dtype=np.uint8), 0, 2)
    with pytest.raises(EmptyInput):
        block_bags(np.zeros((0, 2), dtype=np.float32), np.zeros(0, dtype=np.uint8), 2, 2)


# --- splits ----------------------------------------------------------------


def make_bags(n, W=3, d=2):
    bags = []
    for i in range(n):
        emb = np.full((W, d), float(i), dtype=np.float32)
        bags.append(
            Bag(
                embeddings=emb,
                mask=np.ones(W, dtype=np.uint8),
                bag_label=i % 2,
                instance_labels=np.asarray([i % 2] * W, dtype=np.uint8),
                source_span=(i * W + 1, (i + 1) * W),
            )
        )
    return BagDataset(bags=bags, W=W, d=d)


def test_split_sizes_and_order():
    ds = make_bags(10)
    tr, va, te = split_dataset(ds, (0.6, 0.2, 0.2))
    assert (len(tr), len(va), len(te)) == (6, 2, 2)
    assert (tr.split, va.split, te.split) == ("train", "val", "test")
    # chronological: bag identity preserved in order
    assert [b.source_span for b in tr.bags] == [b.source_span for b in ds.bags[:6]]


def test_split_every_part_nonempty_small_n():
    for n in range(3, 12):
        tr, va, te = split_dataset(make_bags(n), (0.98, 0.01, 0.01))
        assert len(tr) >= 1 and len(va) >= 1 and len(te) >= 1
        assert len(tr) + len(va) + len(te) == n


def test_split_shuffled_is_seeded_permutation():
    ds = make_bags(20)
    tr1, va1, te1 = split_dataset(ds, (0.5, 0.25, 0.25), seed=4, shuffled=True)
    tr2, va2, te2 = split_dataset(ds, (0.5, 0.25, 0.25), seed=4, shuffled=True)
    assert [b.source_span for b in tr1.bags] == [b.source_span for b in tr2.bags]
    spans = sorted(
        b.source_span for part in (tr1, va1, te1) for b in part.bags
    )
    assert spans == [b.source_span for b in ds.bags]
    tr3, _, _ = split_dataset(ds, (0.5, 0.25, 0.25), seed=5, shuffled=True)
    assert [b.source_span for b in tr3.bags] != [b.source_span for b in tr1.bags]


def test_split_too_few_bags():
    with pytest.raises(TooFewBags):
        split_dataset(make_bags(2))


def test_split_bad_ratios():
    ds = make_bags(10)
    with pytest.raises(InvalidWindow):
        split_dataset(ds, (0.5, 0.5, 0.5))
    with pytest.raises(InvalidWindow):
        split_dataset(ds, (1.0, 0.0, 0.0))


# --- bag cache -------------------------------------------------------------


def test_bag_cache_round_trip(tmp_path, rng):
    emb, labels = random_dataset(rng, 37, d=6)
    ds = sliding_bags(emb, labels, 8, 5)
    path = tmp_path / "bags.bin"
    write_bag_cache(path, ds)
    ds2 = read_bag_cache(path)
    assert (ds2.W, ds2.d, len(ds2)) == (ds.W, ds.d, len(ds))
    for a, b in zip(ds.bags, ds2.bags):
        assert np.array_equal(a.embeddings, b.embeddings)
        assert np.array_equal(a.mask, b.mask)
        assert np.array_equal(a.instance_labels, b.instance_labels)
        assert a.bag_label == b.bag_label
        assert a.source_span == b.source_span


def test_bag_cache_missing(tmp_path):
    with pytest.raises(MissingArtifact):
        read_bag_cache(tmp_path / "absent.bin")


def test_bag_cache_bad_magic(tmp_path):
    path = tmp_path / "bags.bin"
    path.write_bytes(b"NOTRIGHT\x00")
    with pytest.raises(CacheError):
        read_bag_cache(path)


def test_bag_cache_trailing_bytes(tmp_path, rng):
    emb, labels = random_dataset(rng, 9, d=3)
    ds = sliding_bags(emb, labels, 3, 3)
    path = tmp_path / "bags.bin"
    write_bag_cache(path, ds)
    path.write_bytes(path.read_bytes() + b"x")
    with pytest.raises(CacheError):
        read_bag_cache(path)


def test_bag_cache_truncated(tmp_path, rng):
    emb, labels = random_dataset(rng, 9, d=3)
    ds = sliding_bags(emb, labels, 3, 3)
    path = tmp_path / "bags.bin"
    write_bag_cache(path, ds)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(CacheError):
        read_bag_cache(path)
