"""Lab-event ingestion, day-grouped masked sequences, normalisation and splits."""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

log = logging.getLogger(__name__)

MAX_DAYS = 100
MIN_DAYS = 2


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class LabEvent:
    episode_id: str
    patient_id: str
    day: int
    test_id: int
    value: object

    def __post_init__(self):
        if self.day < 0:
            raise DataError(f"negative day {self.day} in episode {self.episode_id}")


@dataclass
class LabSequence:
    values: np.ndarray
    mask: np.ndarray
    label: int
    episode_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise DataError(f"episode {self.episode_id}: values {self.values.shape} "
                            f"and mask {self.mask.shape} must be equal T x M grids")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def M(self) -> int:
        return self.values.shape[1]

    def replace(self, values=None, mask=None) -> "LabSequence":
        return LabSequence(self.values.copy() if values is None else values,
                           self.mask.copy() if mask is None else mask,
                           self.label, self.episode_id)


@dataclass
class MaskedVector:
    values: np.ndarray
    mask: np.ndarray


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    category_map: dict = field(default_factory=dict)
    unobserved: list = field(default_factory=list)
    degenerate: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "category_map": self.category_map, "unobserved": self.unobserved,
                "degenerate": self.degenerate}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   dict(d.get("category_map", {})), list(d.get("unobserved", [])),
                   list(d.get("degenerate", [])))


@dataclass
class DatasetSplit:
    train: list
    dev: list
    test: list
    seed: int


@dataclass
class Schema:
    """Number of tests plus token tables for categorical tests."""

    n_tests: int
    categorical: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        cats = {int(k): {str(tok): int(v) for tok, v in table.items()}
                for k, table in d.get("categorical", {}).items()}
        return cls(int(d["n_tests"]), cats)


@dataclass
class IngestReport:
    n_episodes: int = 0
    dropped_short: list = field(default_factory=list)
    test_frequency: dict = field(default_factory=dict)


def ingest_events(events: Iterable[LabEvent], schema: Schema,
                  labels: Mapping[str, int]) -> tuple[list[LabSequence], IngestReport]:
    """Group events into one day-indexed sequence per episode.

    Rows are the distinct days carrying at least one result, in increasing
    order.  Same-day repeats of a test are averaged.
    """
    cells: dict = defaultdict(lambda: defaultdict(list))
    freq: Counter = Counter()
    for ev in events:
        if not 0 <= ev.test_id < schema.n_tests:
            raise DataError(f"test_id {ev.test_id} outside [0, {schema.n_tests})")
        value = ev.value
        if ev.test_id in schema.categorical:
            table = schema.categorical[ev.test_id]
            token = str(value).strip()
            if token not in table:
                raise DataError(f"unknown categorical token {token!r} for test {ev.test_id}")
            value = table[token]
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise DataError(f"non-numeric value {value!r} for non-categorical test {ev.test_id}") from None
        cells[ev.episode_id][(ev.day, ev.test_id)].append(value)
        freq[ev.test_id] += 1

    report = IngestReport(test_frequency=dict(sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))))
    seqs = []
    for ep in sorted(cells):
        by_cell = cells[ep]
        days = sorted({d for d, _ in by_cell})
        if len(days) < MIN_DAYS:
            report.dropped_short.append(ep)
            continue
        if ep not in labels:
            raise DataError(f"episode {ep!r} has no label")
        row = {d: i for i, d in enumerate(days)}
        values = np.zeros((len(days), schema.n_tests))
        mask = np.zeros_like(values, dtype=bool)
        for (d, t), vs in sorted(by_cell.items()):
            values[row[d], t] = math.fsum(vs) / len(vs)
            mask[row[d], t] = True
        seqs.append(truncate_latest(LabSequence(values, mask, int(labels[ep]), str(ep))))
    report.n_episodes = len(seqs)
    if report.dropped_short:
        log.warning("dropped %d episodes with fewer than %d days", len(report.dropped_short), MIN_DAYS)
    return seqs, report


def read_events_csv(path) -> list[LabEvent]:
    """Read ``episode_id,patient_id,day,test_id,value`` rows."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"episode_id", "patient_id", "day", "test_id", "value"} - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"events file missing columns: {sorted(missing)}")
        for rec in reader:
            out.append(LabEvent(rec["episode_id"], rec["patient_id"], int(rec["day"]),
                                int(rec["test_id"]), rec["value"]))
    return out


def read_labels_csv(path) -> dict[str, int]:
    with open(path, newline="") as fh:
        return {rec["episode_id"]: int(rec["label"]) for rec in csv.DictReader(fh)}


def truncate_latest(seq: LabSequence, max_days: int = MAX_DAYS) -> LabSequence:
    if seq.T <= max_days:
        return seq
    return LabSequence(seq.values[-max_days:].copy(), seq.mask[-max_days:].copy(),
                       seq.label, seq.episode_id)


def fit_normalization(train: list[LabSequence], category_map: dict | None = None) -> NormStats:
    """Per-test mean and population std over observed training entries."""
    if not train:
        raise DataError("cannot fit normalisation on an empty training split")
    M = train[0].M
    mean, std = np.zeros(M), np.ones(M)
    unobserved, degenerate = [], []
    for m in range(M):
        # fixed concatenation order keeps the reduction deterministic
        obs = np.concatenate([s.values[s.mask[:, m], m] for s in train])
        if obs.size == 0:
            unobserved.append(m)
            continue
        mean[m] = obs.mean()
        if np.unique(obs).size < 2:
            degenerate.append(m)
            continue
        std[m] = obs.std()
    if unobserved:
        log.warning("tests never observed in training split: %s", unobserved)
    return NormStats(mean, std, dict(category_map or {}), unobserved, degenerate)


def apply_normalization(seq: LabSequence, stats: NormStats) -> LabSequence:
    z = (seq.values - stats.mean) / stats.std
    return seq.replace(values=np.where(seq.mask, z, 0.0))


def average_sequence(seq: LabSequence) -> MaskedVector:
    """Mean over observed days per test; tests never observed stay 0 and masked."""
    counts = seq.mask.sum(axis=0)
    totals = np.where(seq.mask, seq.values, 0.0).sum(axis=0)
    observed = counts > 0
    values = np.where(observed, totals / np.maximum(counts, 1), 0.0)
    return MaskedVector(values, observed)


def split_sizes(n: int) -> tuple[int, int, int]:
    """65/15/20 partition sizes; dev and test rounded half-up, train takes the rest."""
    dev = math.floor(0.15 * n + 0.5)
    test = math.floor(0.20 * n + 0.5)
    return n - dev - test, dev, test


def split_dataset(seqs: list, seed: int) -> DatasetSplit:
    if len(seqs) < 10:
        raise DataError(f"need at least 10 episodes to split, got {len(seqs)}")
    order = np.random.default_rng(seed).permutation(len(seqs))
    n_train, n_dev, _ = split_sizes(len(seqs))
    pick = lambda idx: [seqs[i] for i in idx]
    return DatasetSplit(pick(order[:n_train]), pick(order[n_train:n_train + n_dev]),
                        pick(order[n_train + n_dev:]), seed)


def prepare_split(seqs: list[LabSequence], seed: int) -> tuple[DatasetSplit, NormStats]:
    """Split, fit statistics on train only, and normalise all three parts."""
    split = split_dataset(seqs, seed)
    stats = fit_normalization(split.train)
    norm = lambda part: [apply_normalization(s, stats) for s in part]
    return DatasetSplit(norm(split.train), norm(split.dev), norm(split.test), seed), stats


def missing_rate(seqs: list[LabSequence]) -> float:
    total = sum(s.mask.size for s in seqs)
    return 1.0 - sum(int(s.mask.sum()) for s in seqs) / total


# ---------------------------------------------------------------------------
# line-delimited dataset files


def save_dataset(seqs: list[LabSequence], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for s in seqs:
            rec = {"episode_id": s.episode_id, "label": int(s.label),
                   "values": np.where(s.mask, s.values, 0.0).tolist(),
                   "mask": s.mask.astype(int).tolist()}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_dataset(path) -> list[LabSequence]:
    seqs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                seqs.append(LabSequence(rec["values"], np.asarray(rec["mask"], dtype=bool),
                                        int(rec["label"]), str(rec["episode_id"])))
            except (KeyError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}:{lineno}: bad record ({exc})") from None
    if not seqs:
        raise DataError(f"{path}: no records")
    return seqs
