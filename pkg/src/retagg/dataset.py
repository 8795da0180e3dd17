"""Dataset ingestion, preprocessing, and sliding-window extraction.

On-disk layout:

    root/
      manifest.json      array of {"id", "file", "label", "split"?, "fs"?}
      <channel files>    plain text, one decimal sample per line

Each channel is a single labeled univariate recording of arbitrary
length. Preprocessing follows a fixed protocol: per-channel z-score
normalization, majority-class downsampling, and whole-channel
train/val/test splits so that no recording contributes windows to more
than one split.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

VALID_SPLITS = ("train", "val", "test")


class DatasetError(Exception):
    """Raised for malformed manifests, channel files, or label sets."""


@dataclass(frozen=True)
class Channel:
    """One labeled univariate recording."""

    id: str
    values: np.ndarray
    label: int
    split: str | None = None
    fs: float | None = None  # sampling frequency in Hz, when the manifest provides one

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise DatasetError(f"channel {self.id!r}: values must be a non-empty 1-D sequence")
        if self.label not in (0, 1):
            raise DatasetError(f"channel {self.id!r}: label must be 0 or 1, got {self.label!r}")
        if self.split is not None and self.split not in VALID_SPLITS:
            raise DatasetError(f"channel {self.id!r}: split must be one of {VALID_SPLITS}, got {self.split!r}")
        object.__setattr__(self, "values", values)

    @property
    def length(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class WindowConfig:
    """Sliding-window geometry: window length and stride, in samples."""

    window_length: int = 1024
    stride: int = 5

    def __post_init__(self):
        if self.window_length < 1:
            raise ValueError(f"window_length must be >= 1, got {self.window_length}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    def count_for(self, length: int) -> int:
        """Number of windows a recording of `length` samples yields."""
        if length < self.window_length:
            return 0
        return (length - self.window_length) // self.stride + 1


@dataclass(frozen=True)
class Window:
    """A fixed-length contiguous slice of one channel.

    Two windows of the same channel are identical iff their
    window_index values match; overlapping slices at distinct indices
    count as distinct windows.
    """

    channel_id: str
    window_index: int
    start: int
    values: np.ndarray


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/val/test channel-id sets covering the retained channels."""

    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]
    balance_seed: int = 0

    def split_of(self, channel_id: str) -> str:
        for name in VALID_SPLITS:
            if channel_id in getattr(self, name):
                return name
        raise KeyError(channel_id)

    def select(self, channels: list[Channel], name: str) -> list[Channel]:
        ids = getattr(self, name)
        return [ch for ch in channels if ch.id in ids]


def load_dataset(root_path: str | Path) -> list[Channel]:
    """Read every channel listed in the manifest under `root_path`.

    Values are returned raw (not normalized). Channels are returned in
    manifest order. Errors carry the offending file, and where relevant
    the line number.
    """
    root = Path(root_path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DatasetError(f"missing manifest: {manifest_path}")
    try:
        records = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(records, list):
        raise DatasetError(f"{manifest_path}: manifest must be a JSON array of records")

    channels: list[Channel] = []
    seen: set[str] = set()
    for pos, rec in enumerate(records):
        if not isinstance(rec, dict) or "id" not in rec or "file" not in rec or "label" not in rec:
            raise DatasetError(f"{manifest_path}: record {pos} must carry 'id', 'file', and 'label'")
        cid = str(rec["id"])
        if cid in seen:
            raise DatasetError(f"{manifest_path}: duplicate channel id {cid!r} (record {pos})")
        seen.add(cid)
        label = rec["label"]
        if label not in (0, 1):
            raise DatasetError(f"{manifest_path}: channel {cid!r} has label {label!r}, expected 0 or 1")
        data_path = root / str(rec["file"])
        if not data_path.is_file():
            raise DatasetError(f"channel {cid!r}: missing data file {data_path}")
        channels.append(
            Channel(
                id=cid,
                values=_read_samples(data_path),
                label=int(label),
                split=rec.get("split"),
                fs=float(rec["fs"]) if rec.get("fs") is not None else None,
            )
        )
    return channels


def _read_samples(path: Path) -> np.ndarray:
    values: list[float] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            token = line.strip()
            if not token:
                continue
            try:
                values.append(float(token))
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric sample {token!r}") from None
    if not values:
        raise DatasetError(f"{path}: channel file contains no samples")
    return np.asarray(values, dtype=np.float64)


def zscore_normalize(channel: Channel) -> Channel:
    """Return a copy with zero mean and unit population-variance values.

    A constant channel maps to all zeros instead of dividing by zero.
    """
    values = channel.values
    mean = values.mean()
    std = values.std()  # population std: the unit-variance check is exact
    if std == 0.0:
        normalized = np.zeros_like(values)
    else:
        normalized = (values - mean) / std
    return replace(channel, values=normalized)


def balance_classes(channels: list[Channel], seed: int) -> list[Channel]:
    """Downsample the majority class so both label counts are equal.

    The minority class is untouched, retained channels keep their
    contents, and the result is deterministic for a fixed seed. Input
    order is preserved among retained channels.
    """
    by_label = {0: [ch for ch in channels if ch.label == 0], 1: [ch for ch in channels if ch.label == 1]}
    for label in (0, 1):
        if not by_label[label]:
            raise DatasetError(f"cannot balance classes: no channels with label {label}")
    minority = min(len(by_label[0]), len(by_label[1]))
    if len(by_label[0]) == len(by_label[1]):
        return list(channels)

    majority_label = 0 if len(by_label[0]) > len(by_label[1]) else 1
    majority_ids = [ch.id for ch in by_label[majority_label]]
    rng = np.random.default_rng(seed)
    keep = set(rng.choice(len(majority_ids), size=minority, replace=False).tolist())
    kept_ids = {majority_ids[i] for i in keep}
    return [ch for ch in channels if ch.label != majority_label or ch.id in kept_ids]


def split_dataset(
    channels: list[Channel],
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> DatasetSplit:
    """Assign whole channels to train/val/test.

    Channels whose manifest record already carries a split are honored
    verbatim; only the remainder is assigned randomly. Assignment is
    stratified by label where counts permit, split sizes follow the
    fractions by largest remainder, and every channel lands in exactly
    one split, so no recording's windows ever cross splits.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    if len(channels) < 3:
        raise DatasetError(f"need at least 3 channels to split, got {len(channels)}")

    assigned: dict[str, list[str]] = {name: [] for name in VALID_SPLITS}
    unassigned: list[Channel] = []
    for ch in channels:
        if ch.split is not None:
            assigned[ch.split].append(ch.id)
        else:
            unassigned.append(ch)

    if unassigned:
        targets = _largest_remainder(len(unassigned), fractions)
        ordered = _stratified_order(unassigned, seed)
        offset = 0
        for name, count in zip(VALID_SPLITS, targets):
            assigned[name].extend(ch.id for ch in ordered[offset : offset + count])
            offset += count

    return DatasetSplit(
        train=frozenset(assigned["train"]),
        val=frozenset(assigned["val"]),
        test=frozenset(assigned["test"]),
        balance_seed=seed,
    )


def _largest_remainder(n: int, fractions: tuple[float, float, float]) -> list[int]:
    """Integer split sizes summing to n, proportional to fractions."""
    quotas = [n * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    leftover = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def _stratified_order(channels: list[Channel], seed: int) -> list[Channel]:
    """Shuffle within each label group, then interleave groups proportionally.

    Any contiguous slice of the result has label proportions within one
    channel of the overall proportions, so slicing at the split targets
    yields stratified splits.
    """
    rng = np.random.default_rng(seed)
    groups: dict[int, list[Channel]] = {}
    for label in sorted({ch.label for ch in channels}):
        group = [ch for ch in channels if ch.label == label]
        perm = rng.permutation(len(group))
        groups[label] = [group[i] for i in perm]

    keyed: list[tuple[float, int, Channel]] = []
    for label, group in groups.items():
        for pos, ch in enumerate(group):
            keyed.append(((pos + 0.5) / len(group), label, ch))
    keyed.sort(key=lambda item: (item[0], item[1]))
    return [ch for _, _, ch in keyed]


def extract_windows(channel: Channel, config: WindowConfig) -> list[Window]:
    """All sliding windows of the channel, ordered by start offset.

    Values are views into the channel array, so equality with the
    source slice is exact.
    """
    count = config.count_for(channel.length)
    return [
        Window(
            channel_id=channel.id,
            window_index=k,
            start=k * config.stride,
            values=channel.values[k * config.stride : k * config.stride + config.window_length],
        )
        for k in range(count)
    ]


def window_matrix(channel: Channel, config: WindowConfig) -> np.ndarray:
    """All windows stacked as a (count, window_length) view-backed array."""
    count = config.count_for(channel.length)
    if count == 0:
        return np.empty((0, config.window_length), dtype=np.float64)
    strided = np.lib.stride_tricks.sliding_window_view(channel.values, config.window_length)
    return strided[:: config.stride][:count]
