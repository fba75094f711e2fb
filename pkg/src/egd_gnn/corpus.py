"""Interaction logs: loading, leave-one-out splits, padded windows, negatives."""

from __future__ import annotations

import json
import re
from collections import Counter
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

FORMATS = ("movielens-dat", "amazon-jsonl", "tsv")
PAD = 0
_DIGITS = re.compile(r"(\d+)")


class CorpusError(ValueError):
    pass


def _parse_ts(raw: str):
    try:
        return int(raw)
    except ValueError:
        return float(raw)


def _natural_key(raw: str):
    # digit runs compare numerically ("item9" < "item10"); raw string breaks ties ("01" vs "1")
    parts = tuple((0, int(t), "") if t.isdigit() else (1, 0, t) for t in _DIGITS.split(raw) if t)
    return parts, raw


@dataclass(frozen=True)
class InteractionCorpus:
    """Per-user chronological item sequences over dense indices.

    Items are numbered 1..N (0 is the padding slot); users 0..M-1.
    ``sequences[u]`` is a tuple of ``(item, timestamp)`` pairs sorted by
    timestamp, ties kept in input order.
    """

    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    sequences: tuple[tuple[tuple[int, object], ...], ...]
    user_index: dict[str, int] = field(init=False, repr=False, compare=False)
    item_index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "user_index", {u: i for i, u in enumerate(self.user_ids)})
        object.__setattr__(self, "item_index", {v: i + 1 for i, v in enumerate(self.item_ids)})

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_interactions(self) -> int:
        return sum(len(s) for s in self.sequences)

    def items(self, user: int) -> list[int]:
        return [v for v, _ in self.sequences[user]]

    def history(self, user: int) -> set[int]:
        return {v for v, _ in self.sequences[user]}

    def raw_item(self, index: int) -> str:
        return self.item_ids[index - 1]

    def stats(self) -> dict:
        m, n, total = self.n_users, self.n_items, self.n_interactions
        return {
            "users": m,
            "items": n,
            "interactions": total,
            "mean_sequence_length": total / m if m else 0.0,
            "sparsity": 1.0 - total / (m * n) if m and n else 0.0,
        }

    @classmethod
    def from_events(cls, events: Iterable[tuple[str, str, object]]) -> "InteractionCorpus":
        """Build from ``(user, item, timestamp)`` rows in file order."""
        per_user: dict[str, list[tuple[str, object]]] = {}
        for user, item, ts in events:
            per_user.setdefault(user, []).append((item, ts))
        if not per_user:
            raise CorpusError("no interactions")
        users = sorted(per_user, key=_natural_key)
        items = sorted({it for rows in per_user.values() for it, _ in rows}, key=_natural_key)
        index = {v: i + 1 for i, v in enumerate(items)}
        seqs = []
        for u in users:
            rows = sorted(per_user[u], key=lambda r: r[1])  # stable: ties keep file order
            seqs.append(tuple((index[it], ts) for it, ts in rows))
        return cls(tuple(users), tuple(items), tuple(seqs))

    def events(self) -> Iterator[tuple[str, str, object]]:
        for u, seq in zip(self.user_ids, self.sequences):
            for v, ts in seq:
                yield u, self.item_ids[v - 1], ts


def _read_lines(path: Path) -> list[str]:
    if not path.exists():
        raise CorpusError(f"{path}: no such file")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not any(line.strip() for line in lines):
        raise CorpusError(f"{path}: empty file")
    return lines


def _parse_movielens(lines, path):
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split("::")
        if len(parts) != 4:
            raise CorpusError(f"{path}:{lineno}: expected UserID::MovieID::Rating::Timestamp")
        try:
            yield parts[0].strip(), parts[1].strip(), _parse_ts(parts[3].strip())
        except ValueError:
            raise CorpusError(f"{path}:{lineno}: bad timestamp {parts[3]!r}") from None


def _parse_amazon(lines, path):
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            yield str(obj["reviewerID"]), str(obj["asin"]), _parse_ts(str(obj["unixReviewTime"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"{path}:{lineno}: malformed record ({exc})") from None


def _parse_tsv(lines, path, header):
    for lineno, line in enumerate(lines, 1):
        if header and lineno == 1:
            continue
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise CorpusError(f"{path}:{lineno}: expected user<TAB>item<TAB>timestamp")
        try:
            yield parts[0].strip(), parts[1].strip(), _parse_ts(parts[2].strip())
        except ValueError:
            raise CorpusError(f"{path}:{lineno}: bad timestamp {parts[2]!r}") from None


def k_core_events(events: list, k: int) -> list:
    """Iteratively drop users and items with fewer than ``k`` events."""
    if k <= 1:
        return events
    while True:
        users = Counter(e[0] for e in events)
        items = Counter(e[1] for e in events)
        kept = [e for e in events if users[e[0]] >= k and items[e[1]] >= k]
        if len(kept) == len(events):
            return kept
        events = kept


def load_interactions(
    path, format: str = "tsv", header: bool = False, k_core: int = 0
) -> InteractionCorpus:
    """Read an interaction log into an :class:`InteractionCorpus`.

    ``k_core`` > 1 applies iterative k-core filtering before indexing; it is
    a no-op on data that is already filtered.
    """
    path = Path(path)
    lines = _read_lines(path)
    if format == "movielens-dat":
        events = list(_parse_movielens(lines, path))
    elif format == "amazon-jsonl":
        events = list(_parse_amazon(lines, path))
    elif format == "tsv":
        events = list(_parse_tsv(lines, path, header))
    else:
        raise CorpusError(f"unknown format {format!r}; expected one of {FORMATS}")
    events = k_core_events(events, k_core)
    if not events:
        raise CorpusError(f"{path}: no interactions left after {k_core}-core filtering")
    return InteractionCorpus.from_events(events)


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitView:
    train: tuple[int, ...]
    valid_target: int
    test_target: int

    def history_for(self, split: str) -> tuple[int, ...]:
        if split == "valid":
            return self.train
        if split == "test":
            return self.train + (self.valid_target,)
        raise ValueError(f"unknown split {split!r}")

    def target_for(self, split: str) -> int:
        return self.valid_target if split == "valid" else self.test_target


class Splits(Mapping):
    """User index -> :class:`SplitView`, plus the number of users dropped."""

    def __init__(self, views: dict[int, SplitView], n_dropped: int = 0):
        self._views = dict(sorted(views.items()))
        self.n_dropped = n_dropped

    def __getitem__(self, user):
        return self._views[user]

    def __iter__(self):
        return iter(self._views)

    def __len__(self):
        return len(self._views)

    def train_sequences(self) -> list[list[int]]:
        return [list(v.train) for v in self._views.values()]


def leave_one_out_split(corpus: InteractionCorpus) -> Splits:
    views, dropped = {}, 0
    for u in range(corpus.n_users):
        seq = corpus.items(u)
        if len(seq) < 3:
            dropped += 1
            continue
        views[u] = SplitView(tuple(seq[:-2]), seq[-2], seq[-1])
    return Splits(views, dropped)


# ---------------------------------------------------------------- windows


@dataclass(frozen=True)
class PaddedWindow:
    indices: tuple[int, ...]
    positions: tuple[int, ...]
    target: int


def pad_left(items: Sequence[int], T: int) -> tuple[int, ...]:
    """Keep the most recent ``T`` items and left-pad with zeros to length ``T``."""
    recent = tuple(items[-T:]) if len(items) else ()
    return (PAD,) * (T - len(recent)) + recent


def make_windows(split: SplitView | Sequence[int], T: int) -> list[PaddedWindow]:
    if T < 1:
        raise ValueError("window length T must be >= 1")
    train = split.train if isinstance(split, SplitView) else tuple(split)
    positions = tuple(range(T))
    return [PaddedWindow(pad_left(train[:t], T), positions, train[t]) for t in range(1, len(train))]


def stack_windows(windows: Sequence[PaddedWindow]) -> tuple[np.ndarray, np.ndarray]:
    """(B, T) index matrix and (B,) targets."""
    if not windows:
        return np.zeros((0, 0), dtype=np.int64), np.zeros(0, dtype=np.int64)
    idx = np.array([w.indices for w in windows], dtype=np.int64)
    tgt = np.array([w.target for w in windows], dtype=np.int64)
    return idx, tgt


def training_arrays(sequences: Iterable[Sequence[int]], T: int) -> tuple[np.ndarray, np.ndarray]:
    """All prefix windows of all sequences, in sequence order."""
    rows, targets = [], []
    for seq in sequences:
        seq = list(seq)
        for t in range(1, len(seq)):
            rows.append(pad_left(seq[:t], T))
            targets.append(seq[t])
    if not rows:
        return np.zeros((0, T), dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.array(rows, dtype=np.int64), np.array(targets, dtype=np.int64)


# ---------------------------------------------------------------- negatives


@dataclass(frozen=True)
class NegativeSample:
    candidates: tuple[int, ...]
    positive_position: int


def user_seed(seed: int, user: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(user)])


def sample_negatives(
    corpus: InteractionCorpus | int,
    user: int,
    positive: int,
    n: int = 100,
    seed=0,
    history: Iterable[int] | None = None,
) -> NegativeSample:
    """Draw ``n`` distinct negatives uniformly from items outside the user's history.

    ``corpus`` may be an item count when ``history`` is given explicitly.
    """
    if isinstance(corpus, InteractionCorpus):
        n_items = corpus.n_items
        seen = corpus.history(user) if history is None else set(history)
    else:
        n_items = int(corpus)
        seen = set(history or ())
    seen.add(positive)
    excluded = np.fromiter((v for v in seen if 1 <= v <= n_items), dtype=np.int64)
    eligible = np.setdiff1d(np.arange(1, n_items + 1), excluded, assume_unique=True)
    if eligible.size < n:
        raise CorpusError(
            f"user {user}: only {eligible.size} eligible negatives, need {n}"
        )
    rng = np.random.default_rng(seed)
    negatives = rng.choice(eligible, size=n, replace=False)
    return NegativeSample((int(positive),) + tuple(int(v) for v in negatives), 0)


# ---------------------------------------------------------------- preprocessed dir


def write_prepared(corpus: InteractionCorpus, splits: Splits, out_dir) -> None:
    """Write items.tsv, sequences.tsv, train/valid/test.tsv and stats.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "items.tsv", "w") as fh:
        for i, raw in enumerate(corpus.item_ids, 1):
            fh.write(f"{raw}\t{i}\n")
    with open(out / "sequences.tsv", "w") as fh:
        for u, raw in enumerate(corpus.user_ids):
            for v, ts in corpus.sequences[u]:
                fh.write(f"{raw}\t{v}\t{ts}\n")
    with open(out / "train.tsv", "w") as tr, open(out / "valid.tsv", "w") as va, open(
        out / "test.tsv", "w"
    ) as te:
        for u, view in splits.items():
            raw = corpus.user_ids[u]
            tr.write(f"{raw}\t{' '.join(map(str, view.train))}\n")
            va.write(f"{raw}\t{view.valid_target}\n")
            te.write(f"{raw}\t{view.test_target}\n")
    stats = corpus.stats()
    stats["users_retained"] = len(splits)
    stats["users_dropped"] = splits.n_dropped
    with open(out / "stats.json", "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)


def read_prepared(in_dir) -> tuple[InteractionCorpus, Splits]:
    src = Path(in_dir)
    if not (src / "items.tsv").exists():
        raise CorpusError(f"{src}: not a prepared corpus directory (items.tsv missing)")
    items = []
    for lineno, line in enumerate((src / "items.tsv").read_text().splitlines(), 1):
        raw, idx = line.split("\t")
        if int(idx) != lineno:
            raise CorpusError(f"{src}/items.tsv:{lineno}: indices must be contiguous from 1")
        items.append(raw)
    per_user: dict[str, list] = {}
    for line in (src / "sequences.tsv").read_text().splitlines():
        raw, v, ts = line.split("\t")
        per_user.setdefault(raw, []).append((int(v), _parse_ts(ts)))
    users = tuple(sorted(per_user, key=_natural_key))
    corpus = InteractionCorpus(users, tuple(items), tuple(tuple(per_user[u]) for u in users))
    return corpus, leave_one_out_split(corpus)
