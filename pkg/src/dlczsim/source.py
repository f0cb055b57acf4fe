"""Seeded Monte Carlo generator of time-tagged detection events.

Each trial stores a number of collective excitations drawn from a
thermal (or optionally Poissonian) law.  Every excitation may herald a
field-1 click and, independently, be retrieved into a field-2 click
whose time tag is drawn from the collective-readout wavepacket by
inverse transform sampling.  Uncorrelated noise clicks land on both
fields.  All randomness derives from per-block substreams of the run
seed, so a stream is bit-identical for any worker partitioning.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .physics import AtomSpec, ReadoutSpec, rabi_frequency, wavepacket_cumulative
from .stats import CHANNEL_CODES, CHANNELS, EventStream

NUMBER_LAWS = ("thermal", "poisson")
DECOHERENCE_LAWS = ("exponential", "gaussian")

# Trials per RNG substream.  Fixed so that the draw sequence, and hence
# the event stream, does not depend on how blocks are farmed out.
BLOCK_TRIALS = 1 << 15

INVERSE_CDF_POINTS = 1 << 16


class DetectionEvent(NamedTuple):
    """One detector click; ``channel`` is one of '1a','1b','2a','2b' and
    ``time_ns`` counts from the write (field 1) or read (field 2) turn-on."""

    trial: int
    channel: str
    time_ns: float


@dataclass(frozen=True)
class SourceModel:
    """Generative parameters of the photon-pair source.

    Probabilities are per trial or per excitation as noted.  The product
    retrieval_efficiency * chain_efficiency is the ceiling of the
    heralded detection probability; write-read delay decoherence lowers
    it by the configured law.
    """

    mean_excitation: float
    field1_cond_efficiency: float
    field1_noise: float
    retrieval_efficiency: float
    chain_efficiency: float
    field2_background_rate: float
    coherence_time: float
    write_read_delay: float
    number_law: str = "thermal"
    decoherence_law: str = "exponential"

    def __post_init__(self):
        probs = {
            "field1_cond_efficiency": self.field1_cond_efficiency,
            "field1_noise": self.field1_noise,
            "retrieval_efficiency": self.retrieval_efficiency,
            "chain_efficiency": self.chain_efficiency,
            "field2_background_rate": self.field2_background_rate,
        }
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability in [0, 1]")
        if self.mean_excitation < 0:
            raise ValueError("mean_excitation must be >= 0")
        if self.coherence_time <= 0:
            raise ValueError("coherence_time must be positive (can be inf)")
        if self.write_read_delay < 0:
            raise ValueError("write_read_delay must be >= 0")
        if self.number_law not in NUMBER_LAWS:
            raise ValueError(f"unknown number law {self.number_law!r}")
        if self.decoherence_law not in DECOHERENCE_LAWS:
            raise ValueError(f"unknown decoherence law {self.decoherence_law!r}")

    def survival(self, delay: float | None = None) -> float:
        """Fraction of the stored coherence left after the write-read delay."""
        d = self.write_read_delay if delay is None else delay
        if math.isinf(self.coherence_time):
            return 1.0
        x = d / self.coherence_time
        if self.decoherence_law == "gaussian":
            return math.exp(-x * x)
        return math.exp(-x)


@dataclass(frozen=True)
class TrialTiming:
    """Per-trial pulse sequence and run length."""

    trial_period: float
    write_duration: float
    read_duration: float
    apd_window: float
    n_trials: int

    def __post_init__(self):
        for name in ("trial_period", "write_duration", "read_duration", "apd_window"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_trials < 0:
            raise ValueError("n_trials must be >= 0")
        if self.apd_window > self.trial_period:
            raise ValueError("apd_window cannot exceed the trial period")


def check_timing(model: SourceModel, timing: TrialTiming) -> None:
    """The pulse sequence must fit in one trial period."""
    total = timing.write_duration + model.write_read_delay + timing.read_duration
    if total > timing.trial_period * (1 + 1e-12):
        raise ValueError("write + delay + read exceeds the trial period")


class EmissionSampler:
    """Inverse-CDF sampler of field-2 emission times.

    The closed-form cumulative wavepacket is tabulated on a uniform grid
    (2^16 points) over the read window, truncated and renormalized
    there, and inverted by linear interpolation.
    """

    def __init__(self, readout: ReadoutSpec, atom: AtomSpec,
                 grid_points: int = INVERSE_CDF_POINTS):
        if rabi_frequency(readout, atom) <= 0.0:
            raise ValueError("emission sampling requires a driven read transition")
        # keep the grid on the populated part of the window: beyond the
        # 1 - 1e-12 quantile the inverse is flat anyway
        t_hi = readout.read_duration
        total = wavepacket_cumulative(t_hi, readout, atom)
        if total <= 0.0:
            raise ValueError("wavepacket carries no mass inside the read window")
        lo, hi = 0.0, t_hi
        target = 1.0 - 1e-12
        if wavepacket_cumulative(hi, readout, atom) > target:
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if wavepacket_cumulative(mid, readout, atom) < target:
                    lo = mid
                else:
                    hi = mid
            t_hi = hi
        self.t_grid = np.linspace(0.0, t_hi, grid_points)
        cdf = wavepacket_cumulative(self.t_grid, readout, atom)
        self.cdf_grid = cdf / cdf[-1]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` emission times in seconds."""
        u = rng.random(size)
        return np.interp(u, self.cdf_grid, self.t_grid)


def child_seed(seed: int, *key: int) -> int:
    """Derive an independent 64-bit seed from a run seed and an index
    path; the basis of reproducible sweeps and scans."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def sample_emission_time(readout: ReadoutSpec, atom: AtomSpec, seed) -> float:
    """Draw a single emission time (s); deterministic in the seed.

    Batch users should hold an :class:`EmissionSampler` instead of
    paying the grid construction per draw.
    """
    sampler = EmissionSampler(readout, atom)
    rng = np.random.default_rng(seed)
    return float(sampler.sample(rng, 1)[0])


def _draw_excitations(rng, law: str, mean: float, size: int) -> np.ndarray:
    if mean == 0.0:
        return np.zeros(size, dtype=np.int64)
    if law == "poisson":
        return rng.poisson(mean, size).astype(np.int64)
    # thermal (Bose-Einstein): geometric on {0, 1, ...} with mean nbar
    return rng.geometric(1.0 / (1.0 + mean), size).astype(np.int64) - 1


def _simulate_block(block: int, trial_start: int, n: int, model: SourceModel,
                    timing: TrialTiming, sampler: EmissionSampler | None,
                    seed: int):
    """Generate one block of trials; the draw order is part of the
    determinism contract and must not change."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(block,)))
    write_ns = timing.write_duration * 1e9
    read_ns = timing.read_duration * 1e9
    p_click2 = (model.retrieval_efficiency * model.chain_efficiency
                * model.survival())

    m = _draw_excitations(rng, model.number_law, model.mean_excitation, n)
    noise1 = rng.random(n) < model.field1_noise
    total_exc = int(m.sum())
    herald = rng.random(total_exc) < model.field1_cond_efficiency
    retrieved = rng.random(total_exc) < p_click2
    n_ret = int(retrieved.sum())
    if n_ret and sampler is None:
        raise ValueError("field-2 emission requires a driven readout (zero Rabi frequency)")
    times2 = sampler.sample(rng, n_ret) * 1e9 if n_ret else np.empty(0)
    noise2 = rng.random(n) < model.field2_background_rate

    t_herald = rng.random(int(herald.sum())) * write_ns
    route_herald = rng.integers(0, 2, int(herald.sum()))
    t_noise1 = rng.random(int(noise1.sum())) * write_ns
    route_noise1 = rng.integers(0, 2, int(noise1.sum()))
    route_ret = rng.integers(0, 2, n_ret)
    t_noise2 = rng.random(int(noise2.sum())) * read_ns
    route_noise2 = rng.integers(0, 2, int(noise2.sum()))

    trial_of_exc = np.repeat(np.arange(trial_start, trial_start + n, dtype=np.int64), m)
    trials_all = np.arange(trial_start, trial_start + n, dtype=np.int64)
    trial_col = np.concatenate([
        trial_of_exc[herald],
        trials_all[noise1],
        trial_of_exc[retrieved],
        trials_all[noise2],
    ])
    channel_col = np.concatenate([
        route_herald,
        route_noise1,
        2 + route_ret,
        2 + route_noise2,
    ]).astype(np.uint8)
    time_col = np.concatenate([t_herald, t_noise1, times2, t_noise2])
    order = np.lexsort((time_col, channel_col, trial_col))
    return trial_col[order], channel_col[order], time_col[order]


def simulate(atom: AtomSpec, readout: ReadoutSpec, model: SourceModel,
             timing: TrialTiming, seed: int, workers: int = 1,
             config_key: str | None = None) -> EventStream:
    """Generate the detection record of ``timing.n_trials`` trials.

    Deterministic in (specs, seed): trials are partitioned into
    fixed-size blocks, each driven by the substream derived from
    (seed, block index), so the output is bit-identical for any
    ``workers`` value.
    """
    check_timing(model, timing)
    needs_sampler = (model.retrieval_efficiency * model.chain_efficiency > 0.0
                     and model.mean_excitation > 0.0)
    sampler = EmissionSampler(readout, atom) if needs_sampler else None

    n_total = timing.n_trials
    blocks = []
    start = 0
    index = 0
    while start < n_total:
        n = min(BLOCK_TRIALS, n_total - start)
        blocks.append((index, start, n))
        start += n
        index += 1

    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(
                _simulate_block_star,
                [(b, s, n, model, timing, sampler, seed) for b, s, n in blocks],
                chunksize=max(1, len(blocks) // (4 * workers)),
            ))
    else:
        parts = [_simulate_block(b, s, n, model, timing, sampler, seed)
                 for b, s, n in blocks]

    if parts:
        trial = np.concatenate([p[0] for p in parts])
        channel = np.concatenate([p[1] for p in parts])
        time_ns = np.concatenate([p[2] for p in parts])
    else:
        trial = np.empty(0, dtype=np.int64)
        channel = np.empty(0, dtype=np.uint8)
        time_ns = np.empty(0)
    return EventStream(trial, channel, time_ns, (0, n_total), config_key)


def _simulate_block_star(args):
    return _simulate_block(*args)


def delay_scan(atom: AtomSpec, readout: ReadoutSpec, model: SourceModel,
               timing: TrialTiming, delays, seed: int,
               workers: int = 1) -> list[EventStream]:
    """Re-run the source for each write-read delay.

    Each scan point gets its own derived seed, so points are
    statistically independent while the whole scan stays reproducible.
    """
    streams = []
    for i, delay in enumerate(delays):
        if delay < 0:
            raise ValueError("delays must be >= 0")
        point_model = replace(model, write_read_delay=float(delay))
        streams.append(simulate(atom, readout, point_model, timing,
                                child_seed(seed, 0xD31A, i), workers=workers))
    return streams


def field2_counts_per_trial(events: EventStream) -> np.ndarray:
    """Number of field-2 events in every trial (photon-number record)."""
    f2 = events.channel >= 2
    start, stop = events.trial_range
    return np.bincount(events.trial[f2] - start, minlength=stop - start)


# ---------------------------------------------------------------------------
# event files

EVENTS_CSV_HEADER = "trial,channel,time_ns"
_BINARY_RECORD = struct.Struct("<QBd")


class EventFileError(ValueError):
    """Malformed event file; carries the offending line number."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


def write_events_csv(events: EventStream, path) -> None:
    start, stop = events.trial_range
    with open(path, "w") as fh:
        fh.write("# dlczsim events v1\n")
        if events.config_key:
            fh.write(f"# config_hash = {events.config_key}\n")
        fh.write(f"# trial_range = {start} {stop}\n")
        fh.write(EVENTS_CSV_HEADER + "\n")
        names = np.array(CHANNELS)
        for t, ch, tt in zip(events.trial, names[events.channel], events.time_ns):
            fh.write(f"{t},{ch},{tt:.6f}\n")


def read_events_csv(path) -> EventStream:
    trials, channels, times = [], [], []
    trial_range = None
    config_key = None
    saw_header = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("trial_range"):
                    try:
                        _, value = body.split("=", 1)
                        lo, hi = value.split()
                        trial_range = (int(lo), int(hi))
                    except ValueError:
                        raise EventFileError("bad trial_range metadata", lineno)
                elif body.startswith("config_hash"):
                    config_key = body.split("=", 1)[1].strip()
                continue
            if not saw_header:
                if line != EVENTS_CSV_HEADER:
                    raise EventFileError(
                        f"expected header {EVENTS_CSV_HEADER!r}", lineno)
                saw_header = True
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise EventFileError("expected 3 comma-separated columns", lineno)
            try:
                trials.append(int(parts[0]))
                channels.append(CHANNEL_CODES[parts[1]])
                times.append(float(parts[2]))
            except (ValueError, KeyError):
                raise EventFileError(f"cannot parse event {line!r}", lineno)
    if not saw_header:
        raise EventFileError("missing header line")
    if trial_range is None:
        trial_range = (0, max(trials) + 1 if trials else 0)
    return EventStream(np.array(trials, dtype=np.int64),
                       np.array(channels, dtype=np.uint8),
                       np.array(times), trial_range, config_key)


def write_events_binary(events: EventStream, path) -> None:
    """Length-prefixed records: u64 count then (u64 trial, u8 channel,
    f64 time_ns) little-endian.  Carries no trial-range metadata; pair
    it with its manifest for the trial count."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(events)))
        for t, ch, tt in zip(events.trial, events.channel, events.time_ns):
            fh.write(_BINARY_RECORD.pack(int(t), int(ch), float(tt)))


def read_events_binary(path, trial_range: tuple[int, int] | None = None,
                       config_key: str | None = None) -> EventStream:
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8:
            raise EventFileError("truncated binary event file")
        (count,) = struct.unpack("<Q", head)
        payload = fh.read(_BINARY_RECORD.size * count)
        if len(payload) != _BINARY_RECORD.size * count:
            raise EventFileError("binary event file shorter than its length prefix")
    trial = np.empty(count, dtype=np.int64)
    channel = np.empty(count, dtype=np.uint8)
    time_ns = np.empty(count)
    for i, (t, ch, tt) in enumerate(_BINARY_RECORD.iter_unpack(payload)):
        trial[i], channel[i], time_ns[i] = t, ch, tt
    if trial_range is None:
        trial_range = (0, int(trial.max()) + 1 if count else 0)
    return EventStream(trial, channel, time_ns, trial_range, config_key)


def iter_events(events: EventStream):
    """Yield events as named tuples with channel labels."""
    for t, ch, tt in zip(events.trial, events.channel, events.time_ns):
        yield DetectionEvent(int(t), CHANNELS[ch], float(tt))
