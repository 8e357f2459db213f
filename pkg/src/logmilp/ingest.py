"""Log parsing, variable masking, template extraction, and instance embeddings.

Embeddings are feature-hashed bags of tokens: each token lands on one of `d`
coordinates with a +/-1 sign and the sum is L2-normalized. The hash is FNV-1a
(64-bit) over ``seed_le8 || domain_byte || utf8(token)`` with domain byte 0x01
for the index and 0x02 for the sign, so identical token lists always produce
bit-identical vectors with no external model involved.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CacheError,
    ConfigError,
    InvalidDimension,
    MalformedLine,
    MissingArtifact,
)

VARIABLE_SENTINEL = "<*>"

# FNV-1a 64-bit constants. These are part of the embedding-cache contract and
# must never change.
FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1

_INT_RE = re.compile(r"\d+")
_HEX_RE = re.compile(r"(?:0[xX])?[0-9a-fA-F]{4,}")
_IPV4_RE = re.compile(r"\d{1,3}(?:\.\d{1,3}){3}")

FORMATS = ("bgl_style", "csv_labeled")


@dataclass
class LogRecord:
    line_no: int  # 1-based position within the source file
    raw: str
    label: int  # 0 = normal, 1 = anomalous
    timestamp: int | None
    tokens: list[str]


@dataclass(frozen=True)
class Template:
    template_id: int
    masked_tokens: tuple[str, ...]


class TemplateTable:
    """Append-only exact-match template registry with dense first-seen ids."""

    def __init__(self) -> None:
        self.index: dict[tuple[str, ...], int] = {}
        self.templates: list[Template] = []

    def __len__(self) -> int:
        return len(self.templates)


def extract_template(tokens: Sequence[str], table: TemplateTable) -> Template:
    """Return the template for an exact masked-token match, inserting if new."""
    key = tuple(tokens)
    tid = table.index.get(key)
    if tid is not None:
        return table.templates[tid]
    template = Template(len(table.templates), key)
    table.index[key] = template.template_id
    table.templates.append(template)
    return template


def parse_labeled_line(line: str, fmt: str, line_no: int = 1) -> LogRecord:
    """Parse one labeled log line.

    bgl_style: first whitespace field is the alert tag ("-" means normal),
    the remaining fields are the message. csv_labeled: ``label,timestamp,message``.
    """
    if fmt == "bgl_style":
        fields = line.split()
        if len(fields) < 2:
            raise MalformedLine(f"line {line_no}: expected '<tag> <message...>'")
        tag = fields[0]
        label = 0 if tag == "-" else 1
        timestamp = int(fields[1]) if fields[1].isdigit() else None
        return LogRecord(line_no, line, label, timestamp, fields[1:])
    if fmt == "csv_labeled":
        try:
            row = next(csv.reader([line]))
        except (csv.Error, StopIteration) as exc:
            raise MalformedLine(f"line {line_no}: bad csv") from exc
        if len(row) < 3:
            raise MalformedLine(f"line {line_no}: need label,timestamp,message")
        label_field = row[0].strip()
        if label_field not in ("0", "1"):
            raise MalformedLine(f"line {line_no}: label must be 0 or 1")
        ts_field = row[1].strip()
        timestamp = int(ts_field) if ts_field.isdigit() else None
        tokens = ",".join(row[2:]).split()
        if not tokens:
            raise MalformedLine(f"line {line_no}: empty message")
        return LogRecord(line_no, line, int(label_field), timestamp, tokens)
    raise ConfigError(f"unknown log format {fmt!r}, expected one of {FORMATS}")


def _is_variable(token: str) -> bool:
    if "/" in token:
        return True
    if _INT_RE.fullmatch(token):
        return True
    if _HEX_RE.fullmatch(token):
        return True
    if _IPV4_RE.fullmatch(token):
        return True
    return False


def mask_variables(tokens: Sequence[str]) -> list[str]:
    """Replace variable-looking tokens (integers, hex strings of 4+ digits,
    IPv4 addresses, paths containing '/') with the sentinel token."""
    return [VARIABLE_SENTINEL if _is_variable(t) else t for t in tokens]


def fnv1a64(data: bytes, basis: int = FNV64_OFFSET) -> int:
    h = basis
    for byte in data:
        h = ((h ^ byte) * FNV64_PRIME) & _U64
    return h


def embed_tokens(tokens: Sequence[str], d: int, seed: int = 0) -> np.ndarray:
    """Deterministic feature-hash embedding; unit norm unless `tokens` is empty."""
    if d < 2:
        raise InvalidDimension(f"embedding dimension must be >= 2, got {d}")
    acc = np.zeros(d, dtype=np.float64)
    prefix = (seed & _U64).to_bytes(8, "little")
    for token in tokens:
        data = token.encode("utf-8")
        index = fnv1a64(prefix + b"\x01" + data) % d
        sign = 1.0 if fnv1a64(prefix + b"\x02" + data) & 1 == 0 else -1.0
        acc[index] += sign
    norm = float(np.linalg.norm(acc))
    if norm > 0.0:
        acc /= norm
    return acc.astype(np.float32)


@dataclass
class IngestResult:
    records: list[LogRecord]  # tokens already variable-masked
    embeddings: np.ndarray  # (N, d) float32
    labels: np.ndarray  # (N,) uint8
    template_ids: np.ndarray  # (N,) int64
    table: TemplateTable
    skipped: int  # malformed lines dropped


def ingest_lines(
    lines: Iterable[str], fmt: str = "bgl_style", d: int = 64, seed: int = 0
) -> IngestResult:
    """Parse, mask, template, and embed an iterable of raw lines.

    Blank lines are dropped; malformed lines are skipped and counted.
    """
    if d < 2:
        raise InvalidDimension(f"embedding dimension must be >= 2, got {d}")
    records: list[LogRecord] = []
    rows: list[np.ndarray] = []
    labels: list[int] = []
    template_ids: list[int] = []
    table = TemplateTable()
    embed_memo: dict[tuple[str, ...], np.ndarray] = {}
    skipped = 0
    for line_no, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        try:
            record = parse_labeled_line(line, fmt, line_no)
        except MalformedLine:
            skipped += 1
            continue
        record.tokens = mask_variables(record.tokens)
        key = tuple(record.tokens)
        template = extract_template(key, table)
        vector = embed_memo.get(key)
        if vector is None:
            vector = embed_tokens(record.tokens, d, seed)
            embed_memo[key] = vector
        records.append(record)
        rows.append(vector)
        labels.append(record.label)
        template_ids.append(template.template_id)
    if rows:
        embeddings = np.stack(rows).astype(np.float32)
    else:
        embeddings = np.zeros((0, d), dtype=np.float32)
    return IngestResult(
        records=records,
        embeddings=embeddings,
        labels=np.asarray(labels, dtype=np.uint8),
        template_ids=np.asarray(template_ids, dtype=np.int64),
        table=table,
        skipped=skipped,
    )


def ingest_file(path: str | Path, fmt: str = "bgl_style", d: int = 64, seed: int = 0) -> IngestResult:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"log file not found: {path}")
    with path.open("r", encoding="utf-8", errors="replace") as fh:
        return ingest_lines(fh, fmt=fmt, d=d, seed=seed)


# --- embedding cache -------------------------------------------------------
#
# Three sibling files keyed by a base path: <base>.meta (text: version/count/d),
# <base>.f32 (row-major little-endian float32), <base>.labels (one per line).


def _cache_paths(base: str | Path) -> tuple[Path, Path, Path]:
    base = str(base)
    return Path(base + ".meta"), Path(base + ".f32"), Path(base + ".labels")


def write_embedding_cache(base: str | Path, embeddings: np.ndarray, labels: np.ndarray) -> None:
    meta_path, data_path, labels_path = _cache_paths(base)
    n, d = embeddings.shape
    meta_path.write_text(f"version=1\ncount={n}\nd={d}\n", encoding="ascii")
    data_path.write_bytes(np.ascontiguousarray(embeddings, dtype="<f4").tobytes())
    labels_path.write_text("".join(f"{int(v)}\n" for v in labels), encoding="ascii")


def read_embedding_cache(base: str | Path) -> tuple[np.ndarray, np.ndarray]:
    meta_path, data_path, labels_path = _cache_paths(base)
    for p in (meta_path, data_path, labels_path):
        if not p.exists():
            raise MissingArtifact(f"embedding cache file not found: {p}")
    meta: dict[str, str] = {}
    for raw in meta_path.read_text(encoding="ascii").splitlines():
        if not raw.strip():
            continue
        key, _, value = raw.partition("=")
        meta[key.strip()] = value.strip()
    if meta.get("version") != "1":
        raise CacheError(f"unsupported embedding cache version in {meta_path}")
    try:
        count, d = int(meta["count"]), int(meta["d"])
    except (KeyError, ValueError) as exc:
        raise CacheError(f"bad embedding cache header in {meta_path}") from exc
    blob = data_path.read_bytes()
    if len(blob) != count * d * 4:
        raise CacheError(
            f"embedding data size mismatch in {data_path}: "
            f"expected {count * d * 4} bytes, found {len(blob)}"
        )
    embeddings = np.frombuffer(blob, dtype="<f4").reshape(count, d).copy()
    label_lines = [ln for ln in labels_path.read_text(encoding="ascii").splitlines() if ln.strip()]
    if len(label_lines) != count:
        raise CacheError(f"label count mismatch in {labels_path}")
    labels = np.asarray([int(ln) for ln in label_lines], dtype=np.uint8)
    return embeddings, labels
