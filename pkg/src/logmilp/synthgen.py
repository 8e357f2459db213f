"""Seeded synthetic log corpus with planted instance-level anomalies.

The generator owns its ground truth: it emits a bgl_style text file (alert
tag, timestamp, message) plus a sidecar `.labels` file with one 0/1 per line,
and can independently recompute expected bag labels for cross-checking the
bagging pipeline.

Messages are built from templates whose words are deliberately mask-proof
(syllables always contain a consonant outside the hex alphabet), while each
line fills integer/hex slots with fresh random values, so variable masking
has real work to do. A few high-frequency "distractor" templates dominate the
normal traffic, and every anomalous template shares at least one word with
the normal vocabulary, keeping the two classes lexically close.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidSpec

_CONSONANTS = "ghjklmnpqrstvwz"  # none of these is a hex digit
_VOWELS = "aeiou"
_INT_SLOT = "\x00INT"
_HEX_SLOT = "\x00HEX"
N_DISTRACTORS = 3
ANOMALY_TAG = "ALERT"
_BASE_TS = 1700000000


@dataclass
class SynthSpec:
    seed: int = 0
    n_lines: int = 10000
    vocab_normal: int = 50
    vocab_anom: int = 5
    anomaly_rate: float = 0.02
    distractor_rate: float = 0.5

    def __post_init__(self) -> None:
        if self.n_lines < 1 or self.vocab_normal < 1 or self.vocab_anom < 1:
            raise InvalidSpec("n_lines, vocab_normal, vocab_anom must be >= 1")
        for name, rate in (("anomaly_rate", self.anomaly_rate),
                           ("distractor_rate", self.distractor_rate)):
            if not 0.0 <= rate <= 1.0:
                raise InvalidSpec(f"{name} must be in [0,1], got {rate}")


def _word(rng: random.Random) -> str:
    return "".join(
        rng.choice(_CONSONANTS) + rng.choice(_VOWELS)
        for _ in range(rng.randint(2, 4))
    )


def _make_template(rng: random.Random, pool: list[str], n_words: int) -> tuple[str, ...]:
    words = [rng.choice(pool) for _ in range(n_words)]
    for _ in range(rng.randint(0, 2)):
        slot = _INT_SLOT if rng.random() < 0.5 else _HEX_SLOT
        words.insert(rng.randint(0, len(words)), slot)
    return tuple(words)


def _masked_form(template: tuple[str, ...]) -> tuple[str, ...]:
    return tuple("<*>" if w in (_INT_SLOT, _HEX_SLOT) else w for w in template)


def _build_vocab(spec: SynthSpec, rng: random.Random) -> tuple[list[tuple[str, ...]], list[tuple[str, ...]]]:
    """Normal and anomalous templates with distinct masked forms.

    Anomalous templates are built from their own word pool except for one
    planted normal word, so the two classes stay lexically entangled without
    ever colliding on a masked form.
    """
    normal_pool = [_word(rng) for _ in range(max(4 * spec.vocab_normal // 3, 8))]
    normal: list[tuple[str, ...]] = []
    seen: set[tuple[str, ...]] = set()
    while len(normal) < spec.vocab_normal:
        t = _make_template(rng, normal_pool, rng.randint(4, 7))
        if _masked_form(t) not in seen:
            seen.add(_masked_form(t))
            normal.append(t)
    anom_pool = [_word(rng) for _ in range(max(spec.vocab_anom * 3, 6))]
    anom: list[tuple[str, ...]] = []
    while len(anom) < spec.vocab_anom:
        words = [rng.choice(anom_pool) for _ in range(rng.randint(3, 6))]
        # Keep the classes lexically entangled: plant one word drawn from the
        # normal vocabulary at a random position.
        words.insert(rng.randint(0, len(words)), rng.choice(normal_pool))
        t = tuple(words)
        for _ in range(rng.randint(0, 2)):
            pos = rng.randint(0, len(t))
            slot = _INT_SLOT if rng.random() < 0.5 else _HEX_SLOT
            t = t[:pos] + (slot,) + t[pos:]
        if _masked_form(t) not in seen:
            seen.add(_masked_form(t))
            anom.append(t)
    return normal, anom


def _plan_labels(spec: SynthSpec, rng: random.Random) -> list[int]:
    """0/1 per line; anomaly count is an exact Binomial(n, rate) draw and
    anomalies land in runs of 1-3 lines separated by normal traffic."""
    n = spec.n_lines
    target = sum(1 for _ in range(n) if rng.random() < spec.anomaly_rate)
    if target == 0:
        return [0] * n
    runs: list[int] = []
    remaining = target
    while remaining > 0:
        length = rng.randint(1, min(3, remaining))
        runs.append(length)
        remaining -= length
    n_normal = n - target
    gaps = n_normal + 1
    if len(runs) <= gaps:
        positions = sorted(rng.sample(range(gaps), len(runs)))
    else:  # extreme rates: allow runs to merge
        positions = sorted(rng.choices(range(gaps), k=len(runs)))
    labels: list[int] = []
    run_iter = iter(zip(positions, runs))
    next_run = next(run_iter, None)
    for gap in range(gaps):
        while next_run is not None and next_run[0] == gap:
            labels.extend([1] * next_run[1])
            next_run = next(run_iter, None)
        if gap < n_normal:
            labels.append(0)
    return labels


def _fill(template: tuple[str, ...], rng: random.Random) -> str:
    parts = []
    for w in template:
        if w == _INT_SLOT:
            parts.append(str(rng.randrange(100000)))
        elif w == _HEX_SLOT:
            parts.append(f"{rng.randrange(16 ** 8):08x}")
        else:
            parts.append(w)
    return " ".join(parts)


def generate_lines(spec: SynthSpec) -> tuple[list[str], list[int]]:
    """The corpus as (lines, labels); byte-deterministic under spec.seed."""
    rng = random.Random(spec.seed)
    normal, anom = _build_vocab(spec, rng)
    labels = _plan_labels(spec, rng)
    distractors = normal[: min(N_DISTRACTORS, len(normal))]
    regulars = normal[min(N_DISTRACTORS, len(normal)) :] or normal
    lines: list[str] = []
    ts = _BASE_TS
    for label in labels:
        ts += rng.randrange(0, 3)
        if label:
            template = rng.choice(anom)
            tag = ANOMALY_TAG
        else:
            pool = distractors if rng.random() < spec.distractor_rate else regulars
            template = rng.choice(pool)
            tag = "-"
        lines.append(f"{tag} {ts} {_fill(template, rng)}")
    return lines, labels


def generate(spec: SynthSpec, out_path: str | Path) -> list[int]:
    """Write the corpus and its `.labels` sidecar; returns the line labels."""
    out_path = Path(out_path)
    lines, labels = generate_lines(spec)
    out_path.write_text("".join(line + "\n" for line in lines), encoding="ascii")
    sidecar = out_path.with_name(out_path.name + ".labels")
    sidecar.write_text("".join(f"{v}\n" for v in labels), encoding="ascii")
    return labels


def oracle_bag_labels(labels: list[int], W: int, s: int) -> list[int]:
    """Expected bag labels by direct window enumeration — a deliberate second
    implementation of the windowing rule, kept free of the bagging module."""
    n = len(labels)
    starts = list(range(0, n - W + 1, s)) if n >= W else []
    out = [max(labels[start : start + W]) for start in starts]
    covered = starts[-1] + W if starts else 0
    if covered < n:
        out.append(max(labels[covered:]))
    return out


def oracle_bags(spec: SynthSpec, W: int, s: int) -> list[int]:
    """Regenerate the corpus labels and window them independently."""
    _, labels = generate_lines(spec)
    return oracle_bag_labels(labels, W, s)
