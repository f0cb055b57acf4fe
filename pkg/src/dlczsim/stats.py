"""Trial-level coincidence estimators and binned wavepackets.

Detection events are reduced in a single pass to the per-trial
probabilities P1, P2, P12, P122 and the derived witnesses.  Accumulators
hold raw integer counts, so partial results from disjoint trial shards
merge exactly into the whole-stream answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

CHANNELS = ("1a", "1b", "2a", "2b")
CHANNEL_CODES = {name: code for code, name in enumerate(CHANNELS)}

FIELD1_CODES = (0, 1)
FIELD2_CODES = (2, 3)


def float_repr(x) -> str:
    """Shortest exact decimal form; numpy scalars coerced so file
    writers never leak ``np.float64(...)`` reprs."""
    return repr(float(x))


class Estimate(NamedTuple):
    """Point estimate with a one-sigma standard error.  Undefined
    quantities carry NaN in both slots."""

    value: float
    error: float

    @property
    def defined(self) -> bool:
        return not math.isnan(self.value)


UNDEFINED = Estimate(float("nan"), float("nan"))


@dataclass
class EventStream:
    """Column-oriented detection record for a contiguous range of trials.

    ``trial_range`` is the half-open [start, stop) interval the stream
    covers; trials without clicks simply do not appear in the arrays.
    Times are nanoseconds from the write-pulse turn-on for field-1
    channels (codes 0, 1) and from the read-pulse turn-on for field-2
    channels (codes 2, 3).
    """

    trial: np.ndarray
    channel: np.ndarray
    time_ns: np.ndarray
    trial_range: tuple[int, int]
    config_key: str | None = None

    def __post_init__(self):
        self.trial = np.asarray(self.trial, dtype=np.int64)
        self.channel = np.asarray(self.channel, dtype=np.uint8)
        self.time_ns = np.asarray(self.time_ns, dtype=np.float64)
        if not (len(self.trial) == len(self.channel) == len(self.time_ns)):
            raise ValueError("event columns must have equal length")
        start, stop = self.trial_range
        if stop < start:
            raise ValueError("empty or inverted trial range")
        if len(self.trial) and (self.trial.min() < start or self.trial.max() >= stop):
            raise ValueError("event trial index outside declared trial range")

    def __len__(self) -> int:
        return len(self.trial)

    @property
    def n_trials(self) -> int:
        return self.trial_range[1] - self.trial_range[0]

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.trial) >= 0))

    def split_at(self, trial: int) -> tuple["EventStream", "EventStream"]:
        """Split into [start, trial) and [trial, stop) shards."""
        start, stop = self.trial_range
        if not start <= trial <= stop:
            raise ValueError("split point outside trial range")
        idx = np.searchsorted(self.trial, trial, side="left")
        left = EventStream(self.trial[:idx], self.channel[:idx], self.time_ns[:idx],
                           (start, trial), self.config_key)
        right = EventStream(self.trial[idx:], self.channel[idx:], self.time_ns[idx:],
                            (trial, stop), self.config_key)
        return left, right


def _wilson_error(successes: int, n: int) -> float:
    """Half-width of the one-sigma Wilson interval; behaves sensibly at
    zero and full counts where the Wald formula collapses."""
    if n == 0:
        return float("nan")
    p = successes / n
    return math.sqrt(p * (1.0 - p) / n + 0.25 / (n * n)) / (1.0 + 1.0 / n)


def _proportion(successes: int, n: int) -> Estimate:
    if n == 0:
        return UNDEFINED
    return Estimate(successes / n, _wilson_error(successes, n))


def _normalize_ranges(ranges) -> tuple[tuple[int, int], ...]:
    """Sort, reject overlaps, and coalesce adjacent [start, stop) spans."""
    spans = sorted((int(a), int(b)) for a, b in ranges if b > a)
    merged: list[tuple[int, int]] = []
    for start, stop in spans:
        if merged and start < merged[-1][1]:
            raise ValueError("cannot merge overlapping trial ranges")
        if merged and start == merged[-1][1]:
            merged[-1] = (merged[-1][0], stop)
        else:
            merged.append((start, stop))
    return tuple(merged)


@dataclass(frozen=True)
class CoincidenceStats:
    """Integrated coincidence counts over a set of disjoint trial spans.

    The probability estimates treat a trial as detected in a field if it
    produced at least one click on either detector of that field.  The
    conditional autocorrelation ``g2c`` is normalized per detector pair,
    g2c = P1 * P122 / (P12a * P12b), which equals Pcc/Pc^2 for a
    balanced splitter and makes a coherent source read exactly 1 instead
    of inheriting the 1/4 combinatorial bias of the union estimator.
    """

    n_trials: int
    n1: int
    n2: int
    n12: int
    n12a: int
    n12b: int
    n122: int
    ranges: tuple[tuple[int, int], ...]
    config_key: str | None = None

    def __post_init__(self):
        counts = (self.n1, self.n2, self.n12, self.n12a, self.n12b, self.n122)
        if any(c < 0 for c in counts) or self.n_trials < 0:
            raise ValueError("negative counts")
        if max(counts, default=0) > self.n_trials:
            raise ValueError("counts exceed trial count")
        object.__setattr__(self, "ranges", _normalize_ranges(self.ranges))
        covered = sum(stop - start for start, stop in self.ranges)
        if covered != self.n_trials:
            raise ValueError("trial ranges do not cover n_trials")

    @property
    def p1(self) -> Estimate:
        return _proportion(self.n1, self.n_trials)

    @property
    def p2(self) -> Estimate:
        return _proportion(self.n2, self.n_trials)

    @property
    def p12(self) -> Estimate:
        return _proportion(self.n12, self.n_trials)

    @property
    def p122(self) -> Estimate:
        return _proportion(self.n122, self.n_trials)

    @property
    def pc(self) -> Estimate:
        """P12/P1: retrieval probability conditioned on a herald."""
        return _proportion(self.n12, self.n1)

    @property
    def pcc(self) -> Estimate:
        """P122/P1: double-detection probability conditioned on a herald."""
        return _proportion(self.n122, self.n1)

    @property
    def g2c(self) -> Estimate:
        if self.n12a == 0 or self.n12b == 0 or self.n1 == 0:
            return UNDEFINED
        value = self.n1 * self.n122 / (self.n12a * self.n12b)
        if self.n122 == 0:
            # zero numerator: quote the one-event upper scale as the error
            return Estimate(0.0, self.n1 / (self.n12a * self.n12b))
        rel = math.sqrt(1.0 / self.n122 + 1.0 / self.n12a + 1.0 / self.n12b
                        + 1.0 / self.n1)
        return Estimate(value, value * rel)

    @property
    def g12(self) -> Estimate:
        pc, p2 = self.pc, self.p2
        if not pc.defined or not p2.defined or p2.value == 0.0:
            return UNDEFINED
        value = pc.value / p2.value
        if pc.value == 0.0:
            return Estimate(0.0, pc.error / p2.value)
        rel = math.sqrt((pc.error / pc.value) ** 2 + (p2.error / p2.value) ** 2)
        return Estimate(value, value * rel)

    def as_rows(self) -> list[tuple[str, float, float]]:
        """(name, estimate, std_error) rows for the report writers."""
        rows = []
        for name in ("p1", "p2", "p12", "p122", "pc", "pcc", "g2c", "g12"):
            est = getattr(self, name)
            rows.append((name, est.value, est.error))
        return rows


def accumulate(events: EventStream, timing=None) -> CoincidenceStats:
    """Reduce an event stream to trial-level coincidence counts.

    Events must be sorted by trial index.  A trial counts once per field
    regardless of how many clicks it produced; the triple coincidence
    P122 demands a herald plus clicks on both field-2 detectors of the
    same trial.  ``timing`` (a TrialTiming) optionally bounds the time
    tags against the write/read windows.
    """
    if not events.is_sorted():
        raise ValueError("event stream must be sorted by trial index")
    if len(events) and events.channel.max() > 3:
        raise ValueError("unknown channel code in event stream")
    if timing is not None and len(events):
        f1 = events.channel <= 1
        write_ns = timing.write_duration * 1e9
        read_ns = timing.read_duration * 1e9
        slack = 1e-9
        if np.any(events.time_ns[f1] > write_ns + slack) or \
           np.any(events.time_ns[~f1] > read_ns + slack) or \
           np.any(events.time_ns < 0):
            raise ValueError("event time tag outside its trial window")

    start, stop = events.trial_range
    n = stop - start
    flags = np.zeros((4, n), dtype=bool)
    idx = events.trial - start
    for code in range(4):
        sel = events.channel == code
        flags[code, idx[sel]] = True
    hit1 = flags[0] | flags[1]
    hit2 = flags[2] | flags[3]
    return CoincidenceStats(
        n_trials=n,
        n1=int(hit1.sum()),
        n2=int(hit2.sum()),
        n12=int((hit1 & hit2).sum()),
        n12a=int((hit1 & flags[2]).sum()),
        n12b=int((hit1 & flags[3]).sum()),
        n122=int((hit1 & flags[2] & flags[3]).sum()),
        ranges=((start, stop),),
        config_key=events.config_key,
    )


def merge(a: CoincidenceStats, b: CoincidenceStats) -> CoincidenceStats:
    """Combine counts from disjoint trial ranges; exact and order-free,
    so sharded accumulation reproduces the serial result."""
    if a.config_key is not None and b.config_key is not None \
            and a.config_key != b.config_key:
        raise ValueError("cannot merge stats from different configurations")
    return CoincidenceStats(
        n_trials=a.n_trials + b.n_trials,
        n1=a.n1 + b.n1,
        n2=a.n2 + b.n2,
        n12=a.n12 + b.n12,
        n12a=a.n12a + b.n12a,
        n12b=a.n12b + b.n12b,
        n122=a.n122 + b.n122,
        ranges=a.ranges + b.ranges,
        config_key=a.config_key if a.config_key is not None else b.config_key,
    )


@dataclass
class Wavepacket:
    """Time-binned field-2 detection record.

    Raw bin counts are kept as the source of truth: ``counts_heralded``
    bins field-2 clicks from heralded trials, ``counts_all`` bins every
    field-2 click.  The derived per-bin probabilities divide by the
    herald count and the trial count respectively, so the bin sums
    reproduce the corresponding click-based totals exactly.
    """

    bin_width: float
    counts_heralded: np.ndarray
    counts_all: np.ndarray
    n_heralds: int
    n_trials: int
    config_key: str | None = None

    def __post_init__(self):
        self.counts_heralded = np.asarray(self.counts_heralded, dtype=np.int64)
        self.counts_all = np.asarray(self.counts_all, dtype=np.int64)
        if self.counts_heralded.shape != self.counts_all.shape:
            raise ValueError("bin arrays must have matching shape")
        if not self.bin_width > 0:
            raise ValueError("bin width must be positive")

    @property
    def n_bins(self) -> int:
        return len(self.counts_heralded)

    @property
    def t_centers(self) -> np.ndarray:
        """Bin centers in seconds from read turn-on."""
        return (np.arange(self.n_bins) + 0.5) * self.bin_width

    @property
    def pc(self) -> np.ndarray:
        if self.n_heralds == 0:
            return np.full(self.n_bins, np.nan)
        return self.counts_heralded / self.n_heralds

    @property
    def pc_err(self) -> np.ndarray:
        if self.n_heralds == 0:
            return np.full(self.n_bins, np.nan)
        return np.sqrt(self.counts_heralded) / self.n_heralds

    @property
    def p2(self) -> np.ndarray:
        if self.n_trials == 0:
            return np.full(self.n_bins, np.nan)
        return self.counts_all / self.n_trials

    @property
    def p2_err(self) -> np.ndarray:
        if self.n_trials == 0:
            return np.full(self.n_bins, np.nan)
        return np.sqrt(self.counts_all) / self.n_trials

    @property
    def pc_total(self) -> float:
        """Sum of the heralded bins; the normalization used for pc/Pc."""
        if self.n_heralds == 0:
            return float("nan")
        return float(self.counts_heralded.sum() / self.n_heralds)

    @property
    def p2_total(self) -> float:
        if self.n_trials == 0:
            return float("nan")
        return float(self.counts_all.sum() / self.n_trials)

    @property
    def g12(self) -> np.ndarray:
        """Per-bin pc(t)/p2(t); NaN where the unconditional bin is empty."""
        out = np.full(self.n_bins, np.nan)
        ok = self.counts_all > 0
        if self.n_heralds > 0:
            out[ok] = self.pc[ok] / self.p2[ok]
        return out

    @property
    def g12_err(self) -> np.ndarray:
        out = np.full(self.n_bins, np.nan)
        ok = (self.counts_all > 0) & (self.counts_heralded > 0)
        if self.n_heralds > 0:
            rel = np.sqrt(1.0 / self.counts_heralded[ok] + 1.0 / self.counts_all[ok])
            out[ok] = self.g12[ok] * rel
        return out


def histogram_wavepacket(events: EventStream, timing, dt: float) -> Wavepacket:
    """Bin field-2 clicks into windows of width ``dt`` seconds.

    Heralded clicks (trials with a field-1 click) populate the
    conditional wavepacket; all field-2 clicks populate the
    unconditional one.
    """
    if not dt > 0:
        raise ValueError("bin width must be positive")
    read = timing.read_duration
    if dt > read:
        raise ValueError("bin width exceeds the read window")
    if not events.is_sorted():
        raise ValueError("event stream must be sorted by trial index")

    start, stop = events.trial_range
    n = stop - start
    idx = events.trial - start
    f1 = events.channel <= 1
    heralded_trials = np.zeros(n, dtype=bool)
    heralded_trials[idx[f1]] = True

    n_bins = int(np.ceil(read / dt - 1e-9))
    edges_ns = np.arange(n_bins + 1) * dt * 1e9
    f2 = ~f1
    t2 = events.time_ns[f2]
    counts_all, _ = np.histogram(t2, bins=edges_ns)
    heralded_click = heralded_trials[idx[f2]]
    counts_her, _ = np.histogram(t2[heralded_click], bins=edges_ns)
    return Wavepacket(
        bin_width=dt,
        counts_heralded=counts_her,
        counts_all=counts_all,
        n_heralds=int(heralded_trials.sum()),
        n_trials=n,
        config_key=events.config_key,
    )


WAVEPACKET_HEADER = ("t_ns,pc,pc_err,p2,p2_err,g12,g12_err,"
                     "heralded_counts,total_counts")


def write_wavepacket(wp: Wavepacket, path, meta: dict | None = None) -> None:
    """Binned wavepacket table with enough metadata to refit it."""
    rows = {
        "bin_ns": wp.bin_width * 1e9,
        "n_heralds": wp.n_heralds,
        "n_trials": wp.n_trials,
        "pc_total": wp.pc_total,
    }
    if wp.config_key:
        rows["config_hash"] = wp.config_key
    if meta:
        rows.update(meta)
    pc, pc_err = wp.pc, wp.pc_err
    p2, p2_err = wp.p2, wp.p2_err
    g12, g12_err = wp.g12, wp.g12_err
    with open(path, "w") as fh:
        fh.write("# dlczsim wavepacket v1\n")
        for key in sorted(rows):
            fh.write(f"# {key} = {rows[key]}\n")
        fh.write(WAVEPACKET_HEADER + "\n")
        t_ns = wp.t_centers * 1e9
        r = float_repr
        for i in range(wp.n_bins):
            fh.write(f"{t_ns[i]:.6f},{r(pc[i])},{r(pc_err[i])},{r(p2[i])},"
                     f"{r(p2_err[i])},{r(g12[i])},{r(g12_err[i])},"
                     f"{wp.counts_heralded[i]},{wp.counts_all[i]}\n")


def read_wavepacket(path) -> tuple[Wavepacket, dict]:
    """Inverse of :func:`write_wavepacket`; returns the packet and its
    metadata dictionary (values kept as strings except the core fields)."""
    meta: dict = {}
    heralded, total = [], []
    t_ns = []
    saw_header = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, value = (s.strip() for s in body.split("=", 1))
                    meta[key] = value
                continue
            if not saw_header:
                if line != WAVEPACKET_HEADER:
                    raise ValueError(f"line {lineno}: unexpected wavepacket header")
                saw_header = True
                continue
            parts = line.split(",")
            if len(parts) != 9:
                raise ValueError(f"line {lineno}: expected 9 columns")
            t_ns.append(float(parts[0]))
            heralded.append(int(parts[7]))
            total.append(int(parts[8]))
    if not saw_header:
        raise ValueError("missing wavepacket header line")
    for key in ("bin_ns", "n_heralds", "n_trials"):
        if key not in meta:
            raise ValueError(f"wavepacket file lacks {key} metadata")
    wp = Wavepacket(
        bin_width=float(meta["bin_ns"]) * 1e-9,
        counts_heralded=np.array(heralded, dtype=np.int64),
        counts_all=np.array(total, dtype=np.int64),
        n_heralds=int(meta["n_heralds"]),
        n_trials=int(meta["n_trials"]),
        config_key=meta.get("config_hash"),
    )
    return wp, meta


def stats_report_text(stats: CoincidenceStats) -> str:
    """Human-oriented key-value report."""
    lines = [
        "# dlczsim stats v1",
        f"n_trials = {stats.n_trials}",
        f"n1 = {stats.n1}",
        f"n2 = {stats.n2}",
        f"n12 = {stats.n12}",
        f"n12a = {stats.n12a}",
        f"n12b = {stats.n12b}",
        f"n122 = {stats.n122}",
    ]
    if stats.config_key:
        lines.insert(1, f"config_hash = {stats.config_key}")
    for name, value, error in stats.as_rows():
        lines.append(f"{name} = {value:.9g} +- {error:.4g}")
    return "\n".join(lines) + "\n"


def stats_report_csv(stats: CoincidenceStats) -> str:
    """Machine-oriented summary: one metric per line."""
    lines = ["metric,estimate,std_error"]
    lines.append(f"n_trials,{stats.n_trials},0")
    for name, value, error in stats.as_rows():
        lines.append(f"{name},{float_repr(value)},{float_repr(error)}")
    return "\n".join(lines) + "\n"
