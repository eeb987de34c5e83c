"""Windowed feature encoding of raw longitudinal event records.

Coded events (diagnoses, procedures, medications) become multi-hot indicators
per time window.  Each laboratory measure contributes six statistics per
window (min, max, mean, MAD, last value, count) computed on cohort-fitted
rank-normalized values.  Missing continuous entries hold ``-0.1``, which lies
outside the normalized range.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

CHANNELS = ("primary_dx", "secondary_dx", "procedure", "medication", "lab")
CODED_CHANNELS = CHANNELS[:4]
LAB_STATISTICS = ("min", "max", "mean", "mad", "last", "count")
MISSING_CONTINUOUS = -0.1
WINDOW_DAYS = 90


class EventError(ValueError):
    """A record is malformed or falls outside its patient's span."""


@dataclass(frozen=True)
class RawEvent:
    patient_id: str
    timestamp: date
    channel: str
    code: str
    value: float | None = None

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise EventError(f"unknown channel {self.channel!r} for patient {self.patient_id}")
        if self.channel == "lab":
            if self.value is None or not math.isfinite(self.value):
                raise EventError(f"lab event {self.code!r} of patient {self.patient_id} "
                                 "needs a finite value")
        elif self.value is not None:
            raise EventError(f"coded event {self.code!r} of patient {self.patient_id} "
                             "must not carry a value")


# ------------------------------------------------------------ normalization

def rank_normalize(values) -> np.ndarray:
    """Average ranks scaled to [0, 1]; a single value maps to 0.5."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("rank_normalize needs at least one value")
    if v.size == 1:
        return np.array([0.5])
    return (rankdata(v, method="average") - 1.0) / (v.size - 1)


@dataclass(frozen=True)
class RankMap:
    """Frozen rank normalization: knots from the fitting sample, linear
    interpolation in between, clamped outside."""

    knots: np.ndarray
    levels: np.ndarray

    @classmethod
    def fit(cls, values) -> RankMap:
        v = np.asarray(values, dtype=np.float64)
        ranks = rank_normalize(v)
        knots, first = np.unique(v, return_index=True)
        return cls(knots, ranks[first])

    def __call__(self, values) -> np.ndarray:
        out = np.interp(np.asarray(values, dtype=np.float64), self.knots, self.levels)
        return np.clip(out, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"knots": self.knots.tolist(), "levels": self.levels.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> RankMap:
        return cls(np.asarray(d["knots"], dtype=np.float64),
                   np.asarray(d["levels"], dtype=np.float64))


def lab_window_statistics(values: Sequence[float]) -> dict[str, float]:
    """The six per-window statistics of one lab, values in time order.

    MAD is the median absolute deviation about the window median.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values in window")
    med = float(np.median(v))
    return {"min": float(v.min()), "max": float(v.max()), "mean": float(v.mean()),
            "mad": float(np.median(np.abs(v - med))), "last": float(v[-1]),
            "count": float(v.size)}


# ------------------------------------------------------------------- spans

@dataclass(frozen=True)
class Span:
    start: date
    end: date

    def __post_init__(self):
        if self.end < self.start:
            raise EventError(f"span ends ({self.end}) before it starts ({self.start})")

    def n_windows(self, window_days: int) -> int:
        return (self.end - self.start).days // window_days + 1

    def window_of(self, when: date, window_days: int) -> int:
        return (when - self.start).days // window_days


def default_spans(events: Iterable[RawEvent]) -> dict[str, Span]:
    """Each patient's span from their first to their last event."""
    lo: dict[str, date] = {}
    hi: dict[str, date] = {}
    for ev in events:
        pid = ev.patient_id
        lo[pid] = min(lo.get(pid, ev.timestamp), ev.timestamp)
        hi[pid] = max(hi.get(pid, ev.timestamp), ev.timestamp)
    return {pid: Span(lo[pid], hi[pid]) for pid in lo}


def _by_patient(events: Iterable[RawEvent]) -> dict[str, list[RawEvent]]:
    grouped: dict[str, list[RawEvent]] = defaultdict(list)
    for ev in events:
        grouped[ev.patient_id].append(ev)
    return grouped


# ------------------------------------------------------------ feature spec

@dataclass(frozen=True)
class FeatureSpec:
    """Column layout plus the frozen normalization maps.

    Columns are the coded vocabularies in channel order, followed by six
    statistics per retained lab.
    """

    vocabularies: Mapping[str, tuple[str, ...]]
    value_maps: Mapping[str, RankMap]
    count_maps: Mapping[str, RankMap]
    window_days: int = WINDOW_DAYS
    min_prevalence: float = 0.01
    lab_statistics: tuple[str, ...] = LAB_STATISTICS
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        col = 0
        for ch in CODED_CHANNELS:
            for tok in self.vocabularies.get(ch, ()):
                index[(ch, tok)] = col
                col += 1
        for lab in self.vocabularies.get("lab", ()):
            index[("lab", lab)] = col
            col += len(self.lab_statistics)
        object.__setattr__(self, "_index", index)

    @property
    def n_binary(self) -> int:
        return sum(len(self.vocabularies.get(ch, ())) for ch in CODED_CHANNELS)

    @property
    def width(self) -> int:
        return self.n_binary + len(self.vocabularies.get("lab", ())) * len(self.lab_statistics)

    def column(self, channel: str, code: str) -> int | None:
        return self._index.get((channel, code))

    def feature_names(self) -> list[str]:
        names = [f"{ch}:{tok}" for ch in CODED_CHANNELS for tok in self.vocabularies.get(ch, ())]
        names += [f"lab:{lab}:{stat}" for lab in self.vocabularies.get("lab", ())
                  for stat in self.lab_statistics]
        return names

    def binary_columns(self) -> np.ndarray:
        mask = np.zeros(self.width, dtype=bool)
        mask[:self.n_binary] = True
        return mask

    def empty_window(self) -> np.ndarray:
        return np.where(self.binary_columns(), 0.0, MISSING_CONTINUOUS)

    def manifest(self) -> dict:
        return {
            "window_days": self.window_days,
            "min_prevalence": self.min_prevalence,
            "width": self.width,
            "n_binary": self.n_binary,
            "columns": {str(i): name for i, name in enumerate(self.feature_names())},
            "vocabularies": {ch: list(v) for ch, v in self.vocabularies.items()},
            "value_maps": {k: m.to_dict() for k, m in self.value_maps.items()},
            "count_maps": {k: m.to_dict() for k, m in self.count_maps.items()},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> FeatureSpec:
        d = json.loads(Path(path).read_text())
        return cls({ch: tuple(v) for ch, v in d["vocabularies"].items()},
                   {k: RankMap.from_dict(m) for k, m in d["value_maps"].items()},
                   {k: RankMap.from_dict(m) for k, m in d["count_maps"].items()},
                   d["window_days"], d["min_prevalence"])


def build_feature_spec(events: Sequence[RawEvent], min_prevalence: float = 0.01,
                       window_days: int = WINDOW_DAYS,
                       spans: Mapping[str, Span] | None = None) -> FeatureSpec:
    """Vocabularies of tokens seen in at least ``min_prevalence`` of patients.

    Lab value maps are fitted on every value of that lab in the cohort; count
    maps on the per-window counts, with windows laid out from ``spans``
    (default: each patient's first event).
    """
    events = list(events)
    if not events:
        raise EventError("cannot build a feature spec from no events")
    if not 0.0 <= min_prevalence <= 1.0:
        raise ValueError("min_prevalence must lie in [0, 1]")
    if window_days < 1:
        raise ValueError("window_days must be positive")
    spans = dict(spans) if spans is not None else default_spans(events)
    grouped = _by_patient(events)
    n_patients = len(grouped)

    holders: dict[tuple[str, str], set] = defaultdict(set)
    for ev in events:
        holders[(ev.channel, ev.code)].add(ev.patient_id)
    vocab = {ch: tuple(sorted(code for (c, code), pids in holders.items()
                              if c == ch and len(pids) >= min_prevalence * n_patients))
             for ch in CHANNELS}

    labs = set(vocab["lab"])
    lab_values: dict[str, list[float]] = defaultdict(list)
    window_counts: dict[str, list[int]] = defaultdict(list)
    for pid, evs in grouped.items():
        span = spans[pid]
        per_window: dict[tuple[str, int], int] = defaultdict(int)
        for ev in evs:
            if ev.channel == "lab" and ev.code in labs:
                lab_values[ev.code].append(ev.value)
                per_window[(ev.code, span.window_of(ev.timestamp, window_days))] += 1
        for (lab, _), cnt in per_window.items():
            window_counts[lab].append(cnt)
    value_maps = {lab: RankMap.fit(lab_values[lab]) for lab in sorted(labs)}
    count_maps = {lab: RankMap.fit(window_counts[lab]) for lab in sorted(labs)}
    return FeatureSpec(vocab, value_maps, count_maps, window_days, min_prevalence)


# ------------------------------------------------------------------ tensors

@dataclass
class TrajectoryTensor:
    patient_id: str
    windows: np.ndarray          # (T, width)
    mask: np.ndarray             # (T,) window has data
    continuous_mask: np.ndarray  # (T, width) continuous entry observed
    start: date
    window_days: int = WINDOW_DAYS
    index_window: int | None = None

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]


def encode_windows(events: Sequence[RawEvent], spec: FeatureSpec, span: Span
                   ) -> TrajectoryTensor:
    """Encode one patient's events over ``span`` into a window tensor.

    Tokens outside the vocabulary are ignored.  The last value of a lab is
    the one with the latest timestamp; ties keep input order.
    """
    events = list(events)
    pids = {ev.patient_id for ev in events}
    if len(pids) > 1:
        raise EventError(f"encode_windows got events of several patients: {sorted(pids)}")
    pid = pids.pop() if pids else ""
    wd = spec.window_days
    n_win = span.n_windows(wd)
    width = spec.width
    binary = spec.binary_columns()
    out = np.tile(spec.empty_window(), (n_win, 1))
    mask = np.zeros(n_win, dtype=bool)
    cont_mask = np.zeros((n_win, width), dtype=bool)

    lab_vals: dict[tuple[int, str], list[tuple[date, int, float]]] = defaultdict(list)
    for order, ev in enumerate(events):
        if not span.start <= ev.timestamp <= span.end:
            raise EventError(f"event of patient {pid} at {ev.timestamp.isoformat()} lies "
                             f"outside span {span.start.isoformat()}..{span.end.isoformat()}")
        w = span.window_of(ev.timestamp, wd)
        mask[w] = True
        col = spec.column(ev.channel, ev.code)
        if col is None:
            continue
        if ev.channel == "lab":
            lab_vals[(w, ev.code)].append((ev.timestamp, order, ev.value))
        else:
            out[w, col] = 1.0

    for (w, lab), items in lab_vals.items():
        items.sort(key=lambda it: (it[0], it[1]))
        normed = spec.value_maps[lab]([it[2] for it in items])
        stats = lab_window_statistics(normed)
        stats["count"] = float(spec.count_maps[lab]([len(items)])[0])
        base = spec.column("lab", lab)
        for j, name in enumerate(spec.lab_statistics):
            out[w, base + j] = stats[name]
            cont_mask[w, base + j] = True
    # keeps mask-false windows at the canonical empty vector even when every
    # event in them was out of vocabulary
    out[~mask] = spec.empty_window()
    assert not cont_mask[:, binary].any()
    return TrajectoryTensor(pid, out, mask, cont_mask, span.start, wd)


def encode_cohort(events: Sequence[RawEvent], spec: FeatureSpec,
                  spans: Mapping[str, Span] | None = None) -> list[TrajectoryTensor]:
    """Encode every patient, ordered by patient id."""
    events = list(events)
    spans = dict(spans) if spans is not None else default_spans(events)
    grouped = _by_patient(events)
    return [encode_windows(grouped.get(pid, []), spec, spans[pid]) for pid in sorted(spans)]


def align_at_index(trajectories: Sequence[TrajectoryTensor],
                   index_events: Mapping[str, date], spec: FeatureSpec
                   ) -> list[TrajectoryTensor]:
    """Pad every trajectory so the index window shares one position.

    The shared position is the largest index window in the cohort; patients
    are padded on the left to reach it and on the right to a common length.
    Padding windows are canonical empty windows with a false mask.
    """
    positions = []
    for traj in trajectories:
        when = index_events.get(traj.patient_id)
        if when is None:
            raise EventError(f"patient {traj.patient_id} has no index event")
        pos = (when - traj.start).days // traj.window_days
        if not 0 <= pos < traj.n_windows:
            raise EventError(f"index event of patient {traj.patient_id} at "
                             f"{when.isoformat()} lies outside their span")
        positions.append(pos)
    if not trajectories:
        return []
    shared = max(positions)
    length = max(shared - p + t.n_windows for p, t in zip(positions, trajectories))
    empty = spec.empty_window()
    aligned = []
    for pos, traj in zip(positions, trajectories):
        left = shared - pos
        right = length - left - traj.n_windows
        windows = np.vstack([np.tile(empty, (left, 1)), traj.windows,
                             np.tile(empty, (right, 1))])
        mask = np.concatenate([np.zeros(left, bool), traj.mask, np.zeros(right, bool)])
        cmask = np.vstack([np.zeros((left, spec.width), bool), traj.continuous_mask,
                           np.zeros((right, spec.width), bool)])
        start = date.fromordinal(traj.start.toordinal() - left * traj.window_days)
        aligned.append(TrajectoryTensor(traj.patient_id, windows, mask, cmask, start,
                                        traj.window_days, shared))
    return aligned


def stack(trajectories: Sequence[TrajectoryTensor]) -> tuple[np.ndarray, np.ndarray]:
    """(N, T, width) array and (N, T) window mask of equal-length trajectories."""
    lengths = {t.n_windows for t in trajectories}
    if len(lengths) != 1:
        raise ValueError(f"trajectories differ in length {sorted(lengths)}; align first")
    return (np.stack([t.windows for t in trajectories]),
            np.stack([t.mask for t in trajectories]))


# ---------------------------------------------------------------------- I/O

def read_events_csv(path: str | Path) -> list[RawEvent]:
    """Columns: patient_id, date (ISO-8601), channel, code, value."""
    events = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"patient_id", "date", "channel", "code", "value"} - set(reader.fieldnames or ())
        if missing:
            raise EventError(f"events file lacks columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            try:
                value = float(row["value"]) if row["value"] not in ("", None) else None
                events.append(RawEvent(row["patient_id"], date.fromisoformat(row["date"]),
                                       row["channel"], row["code"], value))
            except ValueError as exc:
                raise EventError(f"{path}:{line}: {exc}") from exc
    return events


def write_tensors(out_dir: str | Path, trajectories: Sequence[TrajectoryTensor],
                  spec: FeatureSpec) -> None:
    """``tensor.csv`` (one row per patient window), ``mask.csv`` and the
    ``layout.json`` manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = spec.feature_names()
    with open(out / "tensor.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "window"] + names)
        for t in trajectories:
            for i, row in enumerate(t.windows):
                w.writerow([t.patient_id, i] + [repr(float(v)) for v in row])
    with open(out / "mask.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "window", "present", "index_window"])
        for t in trajectories:
            for i, present in enumerate(t.mask):
                w.writerow([t.patient_id, i, int(present),
                            "" if t.index_window is None else int(i == t.index_window)])
    spec.save(out / "layout.json")
