"""Interaction ingestion, sequence building, splitting, and instance generation.

Item index 0 is reserved for padding throughout the package: its embedding is
pinned to the zero vector and it never appears as a target or negative.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CacheError, EmptyDatasetError, ParseError, SamplingError

PADDING_INDEX = 0

_CACHE_MAGIC = b"CSEQ1"
_CACHE_VERSION = 1


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    timestamp: float


@dataclass
class UserSequence:
    user_index: int
    items: list[int]


@dataclass
class SequenceData:
    """Filtered, densely indexed per-user sequences plus the id maps."""

    sequences: list[UserSequence]  # position u-1 holds user_index u
    user_ids: list[str]  # index -> original id; slot 0 unused
    item_ids: list[str]

    @property
    def user_count(self) -> int:
        return len(self.user_ids) - 1

    @property
    def item_count(self) -> int:
        return len(self.item_ids) - 1


@dataclass
class SplitDataset:
    """Per-user chronological prefix split. Slot 0 of each list is unused."""

    train: list[list[int]]
    validation: list[list[int]]
    test: list[list[int]]
    user_count: int
    item_count: int
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)
    padding_index: int = PADDING_INDEX

    def users(self) -> range:
        return range(1, self.user_count + 1)


@dataclass(frozen=True)
class TrainingInstance:
    user: int
    prev: tuple[int, ...]  # exactly L entries, oldest first, left-padded
    targets: tuple[int, ...]  # 1..T entries


def load_interactions(path: str, fmt: str = "tsv") -> list[Interaction]:
    """Parse a UTF-8 interaction log.

    Rows are ``user item timestamp`` or ``user item rating timestamp``; the
    rating, when present, is discarded (all feedback is treated as implicit).
    Lines starting with '#' are skipped. Raises ParseError with the offending
    line number, EmptyDatasetError if nothing was parsed.
    """
    if fmt not in ("tsv", "csv"):
        raise ValueError(f"format must be tsv or csv, got {fmt!r}")
    out: list[Interaction] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            cols = [c.strip() for c in stripped.split(",")] if fmt == "csv" else stripped.split()
            if len(cols) < 3:
                raise ParseError(line_no, f"expected >=3 columns, got {len(cols)}")
            if len(cols) > 4:
                raise ParseError(line_no, f"expected <=4 columns, got {len(cols)}")
            # 4-column rows carry a rating in third position; it is dropped.
            ts_text = cols[2] if len(cols) == 3 else cols[3]
            try:
                ts = float(ts_text)
            except ValueError:
                raise ParseError(line_no, f"bad timestamp {ts_text!r}") from None
            out.append(Interaction(cols[0], cols[1], ts))
    if not out:
        raise EmptyDatasetError(f"{path}: no interactions parsed")
    return out


def build_sequences(interactions: list[Interaction], min_feedback: int) -> SequenceData:
    """Deduplicate, filter cold-start users/items to fixpoint, and index densely.

    Users and items with fewer than ``min_feedback`` interactions are removed
    repeatedly until no removal changes anything, so the threshold is
    guaranteed to hold in the output. Surviving ids are numbered from 1 in
    order of first appearance; 0 stays reserved for padding.
    """
    if min_feedback < 1:
        raise ValueError("min_feedback must be >= 1")

    seen: set[tuple[str, str, float]] = set()
    rows: list[Interaction] = []
    for it in interactions:
        key = (it.user, it.item, it.timestamp)
        if key not in seen:
            seen.add(key)
            rows.append(it)

    while True:
        user_counts: dict[str, int] = {}
        item_counts: dict[str, int] = {}
        for it in rows:
            user_counts[it.user] = user_counts.get(it.user, 0) + 1
            item_counts[it.item] = item_counts.get(it.item, 0) + 1
        bad_users = {u for u, c in user_counts.items() if c < min_feedback}
        bad_items = {i for i, c in item_counts.items() if c < min_feedback}
        if not bad_users and not bad_items:
            break
        rows = [it for it in rows if it.user not in bad_users and it.item not in bad_items]
        if not rows:
            raise EmptyDatasetError("cold-start filtering removed every interaction")

    user_ids: list[str] = [""]
    item_ids: list[str] = [""]
    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    per_user: dict[int, list[tuple[float, int, int]]] = {}
    for pos, it in enumerate(rows):
        if it.user not in user_map:
            user_map[it.user] = len(user_ids)
            user_ids.append(it.user)
        if it.item not in item_map:
            item_map[it.item] = len(item_ids)
            item_ids.append(it.item)
        u = user_map[it.user]
        per_user.setdefault(u, []).append((it.timestamp, pos, item_map[it.item]))

    sequences = []
    for u in range(1, len(user_ids)):
        entries = sorted(per_user[u])  # timestamp, then input order for ties
        sequences.append(UserSequence(u, [e[2] for e in entries]))
    return SequenceData(sequences, user_ids, item_ids)


def _prefix_len(ratio: float, n: int) -> int:
    # ceil with a small epsilon so float noise at exact boundaries (e.g.
    # 0.8 * 5 evaluating to 4.0000000000000002) cannot shift the split
    return math.ceil(ratio * n - 1e-9)


def chronological_split(
    seqdata: SequenceData, ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
) -> SplitDataset:
    """Per-user prefix split at the ceil(70%) and ceil(80%) boundaries."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    if any(r < 0 for r in ratios):
        raise ValueError("split ratios must be non-negative")
    n_users = seqdata.user_count
    train: list[list[int]] = [[] for _ in range(n_users + 1)]
    val: list[list[int]] = [[] for _ in range(n_users + 1)]
    test: list[list[int]] = [[] for _ in range(n_users + 1)]
    for seq in seqdata.sequences:
        items = seq.items
        n = len(items)
        c1 = _prefix_len(ratios[0], n)
        c2 = _prefix_len(ratios[0] + ratios[1], n)
        if c1 == 0:
            continue  # user without any training action is dropped
        train[seq.user_index] = items[:c1]
        val[seq.user_index] = items[c1:c2]
        test[seq.user_index] = items[c2:]
    return SplitDataset(
        train, val, test, n_users, seqdata.item_count, seqdata.user_ids, seqdata.item_ids
    )


def pad_left(items: list[int] | tuple[int, ...], length: int) -> tuple[int, ...]:
    """Left-pad with the padding index to exactly ``length`` entries."""
    if len(items) >= length:
        return tuple(items[-length:])
    return (PADDING_INDEX,) * (length - len(items)) + tuple(items)


def generate_instances(
    split: SplitDataset, order: int, num_targets: int, part: str = "train"
) -> list[TrainingInstance]:
    """Expand the split into (user, previous-L, next-T) triplets.

    Training instances come from sliding a window of ``order + num_targets``
    over each user's training prefix; a shorter prefix yields one left-padded
    instance whose targets are its last min(T, len) actions. Validation
    instances take each validation action as a target start and draw history
    from the training prefix plus earlier validation actions.
    """
    if order < 1 or num_targets < 1:
        raise ValueError("order and num_targets must be >= 1")
    if part not in ("train", "validation"):
        raise ValueError(f"part must be train or validation, got {part!r}")
    L, T = order, num_targets
    out: list[TrainingInstance] = []
    for u in split.users():
        if part == "train":
            seq = split.train[u]
            n = len(seq)
            if n == 0:
                continue
            if n >= L + T:
                for off in range(n - L - T + 1):
                    out.append(
                        TrainingInstance(
                            u, tuple(seq[off : off + L]), tuple(seq[off + L : off + L + T])
                        )
                    )
            else:
                k = min(T, n)
                out.append(TrainingInstance(u, pad_left(seq[: n - k], L), tuple(seq[n - k :])))
        else:
            body = split.validation[u]
            if not body:
                continue
            full = split.train[u] + body
            start = len(split.train[u])
            for t in range(start, len(full)):
                prev = pad_left(full[max(0, t - L) : t], L)
                out.append(TrainingInstance(u, prev, tuple(full[t : t + T])))
    return out


def sample_negatives(
    instance: TrainingInstance,
    count: int,
    rng: np.random.Generator,
    item_count: int,
    exclude: set[int] | None = None,
    per_instance: bool = False,
) -> list[int]:
    """Draw negatives uniformly from 1..item_count, never hitting the targets.

    Returns ``count * len(targets)`` draws (or ``count`` with per_instance),
    sampled with replacement. ``exclude`` extends the exclusion set, e.g. with
    the user's whole history.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    excluded = {PADDING_INDEX} | set(instance.targets)
    if exclude:
        excluded |= set(exclude)
    eligible = item_count - sum(1 for x in excluded if 1 <= x <= item_count)
    if eligible < 1:
        raise SamplingError("every item is excluded; cannot sample negatives")
    total = count if per_instance else count * len(instance.targets)

    if eligible < max(4, item_count // 4):
        pool = np.setdiff1d(np.arange(1, item_count + 1), np.fromiter(excluded, dtype=np.int64))
        return [int(x) for x in rng.choice(pool, size=total, replace=True)]

    out: list[int] = []
    while len(out) < total:
        draw = rng.integers(1, item_count + 1, size=total - len(out))
        out.extend(int(x) for x in draw if x not in excluded)
    return out


def save_instance_cache(path: str, instances: list[TrainingInstance], order: int, num_targets: int) -> None:
    """Write instances as the versioned little-endian binary cache."""
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<III", _CACHE_VERSION, order, num_targets))
        fh.write(struct.pack("<I", len(instances)))
        for inst in instances:
            fh.write(struct.pack("<I", inst.user))
            fh.write(struct.pack(f"<{order}I", *inst.prev))
            fh.write(struct.pack("<I", len(inst.targets)))
            fh.write(struct.pack(f"<{len(inst.targets)}I", *inst.targets))


def load_instance_cache(path: str) -> tuple[list[TrainingInstance], int, int]:
    """Read a cache written by save_instance_cache. Returns (instances, L, T)."""

    def read(fh, size: int) -> bytes:
        buf = fh.read(size)
        if len(buf) != size:
            raise CacheError(f"{path}: truncated cache file")
        return buf

    with open(path, "rb") as fh:
        if read(fh, len(_CACHE_MAGIC)) != _CACHE_MAGIC:
            raise CacheError(f"{path}: bad magic, not an instance cache")
        version, order, num_targets = struct.unpack("<III", read(fh, 12))
        if version != _CACHE_VERSION:
            raise CacheError(f"{path}: unsupported cache version {version}")
        (count,) = struct.unpack("<I", read(fh, 4))
        instances: list[TrainingInstance] = []
        for _ in range(count):
            (user,) = struct.unpack("<I", read(fh, 4))
            prev = struct.unpack(f"<{order}I", read(fh, 4 * order))
            (n_t,) = struct.unpack("<I", read(fh, 4))
            if n_t < 1 or n_t > num_targets:
                raise CacheError(f"{path}: instance with {n_t} targets out of range")
            targets = struct.unpack(f"<{n_t}I", read(fh, 4 * n_t))
            instances.append(TrainingInstance(user, prev, targets))
    return instances, order, num_targets


def save_split(path: str, split: SplitDataset) -> None:
    payload = {
        "user_count": split.user_count,
        "item_count": split.item_count,
        "user_ids": split.user_ids,
        "item_ids": split.item_ids,
        "train": split.train,
        "validation": split.validation,
        "test": split.test,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_split(path: str) -> SplitDataset:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return SplitDataset(
        train=payload["train"],
        validation=payload["validation"],
        test=payload["test"],
        user_count=payload["user_count"],
        item_count=payload["item_count"],
        user_ids=payload["user_ids"],
        item_ids=payload["item_ids"],
    )


def history_for(split: SplitDataset, user: int, part: str = "test") -> list[int]:
    """Items known before the evaluated part: train (+ validation for test)."""
    if part == "test":
        return split.train[user] + split.validation[user]
    return split.train[user]
