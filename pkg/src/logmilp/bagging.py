"""Assemble instance embeddings into fixed-width bags with padding masks.

A bag is a window of W instance rows plus a validity mask; its label is the
max of the valid instance labels, so a bag is positive iff it contains at
least one anomalous instance. Instance labels ride along for evaluation only.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CacheError,
    EmptyInput,
    InvalidWindow,
    MissingArtifact,
    TooFewBags,
)

BAG_CACHE_MAGIC = b"LMBAG1\n"


@dataclass
class Bag:
    embeddings: np.ndarray  # (W, d) float32, padded rows zero
    mask: np.ndarray  # (W,) uint8, 1 = valid instance
    bag_label: int  # Y = max over valid instance labels
    instance_labels: np.ndarray  # (W,) uint8; evaluation-only, never read in training
    source_span: tuple[int, int]  # 1-based (first_line_no, last_line_no)

    @property
    def valid_count(self) -> int:
        return int(self.mask.sum())


@dataclass
class BagDataset:
    bags: list[Bag]
    W: int
    d: int
    split: str = "all"

    def __len__(self) -> int:
        return len(self.bags)

    def labels(self) -> np.ndarray:
        return np.asarray([b.bag_label for b in self.bags], dtype=np.uint8)


def _make_bag(
    rows: np.ndarray, row_labels: np.ndarray, row_lines: np.ndarray, W: int
) -> Bag:
    valid = rows.shape[0]
    d = rows.shape[1]
    embeddings = np.zeros((W, d), dtype=np.float32)
    embeddings[:valid] = rows
    mask = np.zeros(W, dtype=np.uint8)
    mask[:valid] = 1
    y = np.zeros(W, dtype=np.uint8)
    y[:valid] = row_labels
    return Bag(
        embeddings=embeddings,
        mask=mask,
        bag_label=int(y.max()),
        instance_labels=y,
        source_span=(int(row_lines[0]), int(row_lines[-1])),
    )


def sliding_bags(
    embeddings: np.ndarray,
    labels: np.ndarray,
    W: int,
    s: int,
    line_nos: np.ndarray | None = None,
) -> BagDataset:
    """Cut N instances into windows starting at 0, s, 2s, ...

    Full windows are emitted as-is. Instances past the last full window's end
    (always fewer than W of them, because s <= W) form one final zero-padded
    bag with their mask bits cleared.
    """
    n = embeddings.shape[0]
    if n == 0:
        raise EmptyInput("no instances to bag")
    if W < 1 or s < 1 or s > W:
        raise InvalidWindow(f"need 1 <= s <= W, got W={W} s={s}")
    labels = np.asarray(labels, dtype=np.uint8)
    if line_nos is None:
        line_nos = np.arange(1, n + 1, dtype=np.int64)
    bags: list[Bag] = []
    full = (n - W) // s + 1 if n >= W else 0
    for j in range(full):
        start = j * s
        bags.append(
            _make_bag(
                embeddings[start : start + W],
                labels[start : start + W],
                line_nos[start : start + W],
                W,
            )
        )
    covered = (full - 1) * s + W if full else 0
    if covered < n:
        bags.append(_make_bag(embeddings[covered:], labels[covered:], line_nos[covered:], W))
    return BagDataset(bags=bags, W=W, d=embeddings.shape[1])


def block_bags(
    embeddings: np.ndarray,
    labels: np.ndarray,
    block: int,
    per_bag: int,
    line_nos: np.ndarray | None = None,
) -> BagDataset:
    """Mean-pool consecutive blocks of `block` lines into block-instances
    (labels OR-ed), then group `per_bag` block-instances per bag."""
    n = embeddings.shape[0]
    if n == 0:
        raise EmptyInput("no instances to bag")
    if block < 1 or per_bag < 1:
        raise InvalidWindow(f"need block >= 1 and per_bag >= 1, got {block}, {per_bag}")
    labels = np.asarray(labels, dtype=np.uint8)
    if line_nos is None:
        line_nos = np.arange(1, n + 1, dtype=np.int64)
    pooled: list[np.ndarray] = []
    pooled_labels: list[int] = []
    spans: list[tuple[int, int]] = []
    for start in range(0, n, block):
        chunk = embeddings[start : start + block]
        pooled.append(chunk.astype(np.float64).mean(axis=0).astype(np.float32))
        pooled_labels.append(int(labels[start : start + block].max()))
        span_lines = line_nos[start : start + block]
        spans.append((int(span_lines[0]), int(span_lines[-1])))
    bags: list[Bag] = []
    d = embeddings.shape[1]
    for start in range(0, len(pooled), per_bag):
        group = pooled[start : start + per_bag]
        valid = len(group)
        mat = np.zeros((per_bag, d), dtype=np.float32)
        mat[:valid] = np.stack(group)
        mask = np.zeros(per_bag, dtype=np.uint8)
        mask[:valid] = 1
        y = np.zeros(per_bag, dtype=np.uint8)
        y[:valid] = pooled_labels[start : start + per_bag]
        bags.append(
            Bag(
                embeddings=mat,
                mask=mask,
                bag_label=int(y.max()),
                instance_labels=y,
                source_span=(spans[start][0], spans[start + valid - 1][1]),
            )
        )
    return BagDataset(bags=bags, W=per_bag, d=d)


def split_dataset(
    ds: BagDataset,
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
    shuffled: bool = False,
) -> tuple[BagDataset, BagDataset, BagDataset]:
    """Contiguous chronological train/val/test split (optionally shuffled first).

    Boundaries come from cumulative rounding and are nudged so every split
    gets at least one bag, which is why fewer than 3 bags is an error.
    """
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidWindow(f"ratios must be positive and sum to 1, got {ratios}")
    n = len(ds.bags)
    if n < 3:
        raise TooFewBags(f"need at least 3 bags to split, got {n}")
    order = list(range(n))
    if shuffled:
        random.Random(seed).shuffle(order)
    b1 = min(max(int(round(ratios[0] * n)), 1), n - 2)
    b2 = min(max(int(round((ratios[0] + ratios[1]) * n)), b1 + 1), n - 1)
    parts = (order[:b1], order[b1:b2], order[b2:])
    names = ("train", "val", "test")
    return tuple(
        BagDataset(bags=[ds.bags[i] for i in idx], W=ds.W, d=ds.d, split=name)
        for idx, name in zip(parts, names)
    )


# --- bag cache -------------------------------------------------------------
#
# Layout: magic "LMBAG1\n"; three text header lines (count=, W=, d=); then per
# bag: mask (W bytes), Y (1 byte), y (W bytes), source span (2 x uint64 LE),
# and the W*d float32 little-endian embedding matrix. Round-trips bit-exact.


def write_bag_cache(path: str | Path, ds: BagDataset) -> None:
    with Path(path).open("wb") as fh:
        fh.write(BAG_CACHE_MAGIC)
        fh.write(f"count={len(ds.bags)}\nW={ds.W}\nd={ds.d}\n".encode("ascii"))
        for bag in ds.bags:
            fh.write(bag.mask.astype(np.uint8).tobytes())
            fh.write(bytes([bag.bag_label]))
            fh.write(bag.instance_labels.astype(np.uint8).tobytes())
            fh.write(struct.pack("<QQ", bag.source_span[0], bag.source_span[1]))
            fh.write(np.ascontiguousarray(bag.embeddings, dtype="<f4").tobytes())


def read_bag_cache(path: str | Path) -> BagDataset:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"bag cache not found: {path}")
    with path.open("rb") as fh:
        magic = fh.read(len(BAG_CACHE_MAGIC))
        if magic != BAG_CACHE_MAGIC:
            raise CacheError(f"bad bag cache magic in {path}")
        header: dict[str, int] = {}
        for _ in range(3):
            line = fh.readline().decode("ascii").strip()
            key, _, value = line.partition("=")
            try:
                header[key] = int(value)
            except ValueError as exc:
                raise CacheError(f"bad bag cache header line {line!r} in {path}") from exc
        try:
            count, W, d = header["count"], header["W"], header["d"]
        except KeyError as exc:
            raise CacheError(f"incomplete bag cache header in {path}") from exc
        bags: list[Bag] = []
        per_bag_bytes = W + 1 + W + 16 + W * d * 4
        for _ in range(count):
            blob = fh.read(per_bag_bytes)
            if len(blob) != per_bag_bytes:
                raise CacheError(f"truncated bag cache {path}")
            mask = np.frombuffer(blob, dtype=np.uint8, count=W, offset=0).copy()
            y_label = int(blob[W])
            y = np.frombuffer(blob, dtype=np.uint8, count=W, offset=W + 1).copy()
            first, last = struct.unpack_from("<QQ", blob, 2 * W + 1)
            mat = (
                np.frombuffer(blob, dtype="<f4", count=W * d, offset=2 * W + 17)
                .reshape(W, d)
                .copy()
            )
            bags.append(
                Bag(
                    embeddings=mat,
                    mask=mask,
                    bag_label=y_label,
                    instance_labels=y,
                    source_span=(int(first), int(last)),
                )
            )
        if fh.read(1):
            raise CacheError(f"trailing bytes in bag cache {path}")
    return BagDataset(bags=bags, W=W, d=d)
