"""Slot-level Monte-Carlo simulation of buffered multichannel ALOHA with fast retrial.

Each slot, every backlogged device (or empty device that just received a
packet) transmits one data block on a uniformly drawn preamble. A block
gets through iff no other active device picked the same preamble; collided
devices simply try again next slot with a fresh preamble.

Randomness
----------
Run ``r`` of a simulation seeded with ``master_seed`` owns the seed sequence
``SeedSequence([master_seed, r])``, spawned into two PCG64 streams: one for
Poisson arrivals, one for preamble picks. Both are consumed element-wise in
(slot, device) order, and a preamble is drawn for every device on every
slot whether or not it transmits. A run's trajectory is therefore fixed by
``(master_seed, r)`` alone, independent of batching, chunking or threads.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import IO, Iterator

import numpy as np

from fastretrial.analytic import SystemConfig, alpha_from_empty_prob
from fastretrial.errors import InvalidConfigError, UndefinedRatioError

logger = logging.getLogger(__name__)

DIVERGENCE_GUARD = 10**9
THREADS_ENV = "FAST_RETRIAL_THREADS"

_CHUNK_SLOTS = 500
_BATCH_ELEMENTS = 20_000  # devices x runs advanced together per slot


@dataclass(frozen=True)
class SimConfig:
    system: SystemConfig
    total_slots: int = 4000
    warmup_slots: int = 2000
    num_runs: int = 200
    master_seed: int = 0
    max_tau: int = 4

    def __post_init__(self):
        if self.total_slots < 1:
            raise InvalidConfigError("total_slots must be positive")
        if not 0 <= self.warmup_slots < self.total_slots:
            raise InvalidConfigError("warmup_slots must satisfy 0 <= warmup < total_slots")
        if self.num_runs < 1:
            raise InvalidConfigError("num_runs must be >= 1")
        if self.max_tau < 1:
            raise InvalidConfigError("max_tau must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise InvalidConfigError("master_seed must be a 64-bit unsigned integer")

    @property
    def retained_slots(self) -> int:
        return self.total_slots - self.warmup_slots

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DeviceState:
    queue_len: int = 0


@dataclass(frozen=True)
class SlotRecord:
    """Outcome of one slot; arrays are indexed by device."""

    arrivals: np.ndarray
    preambles: np.ndarray  # -1 for devices that stayed silent
    success: np.ndarray
    queues: np.ndarray  # post-update queue lengths

    @property
    def active(self) -> int:
        return int((self.preambles >= 0).sum())

    @property
    def successes(self) -> int:
        return int(self.success.sum())


@dataclass
class SimEstimate:
    """Pooled statistics over the retained device-slots of all completed runs.

    ``tail_hits[k]`` counts samples with ``q >= k + 1``; ``tail`` divides by
    ``samples``.
    """

    max_tau: int
    samples: int
    tail_hits: list[int]
    empty_count: int
    queue_sum: int
    tx_attempts: int
    tx_successes: int
    arrival_rate: float
    completed_runs: int
    diverged_runs: int = 0
    empty_prob: float = field(init=False)
    empirical_alpha: float = field(init=False)
    mean_queue: float = field(init=False)

    def __post_init__(self):
        if self.samples:
            self.empty_prob = self.empty_count / self.samples
            self.mean_queue = self.queue_sum / self.samples
            self.empirical_alpha = alpha_from_empty_prob(self.arrival_rate, self.empty_prob)
        else:
            self.empty_prob = self.mean_queue = self.empirical_alpha = float("nan")

    @property
    def tail(self) -> list[float]:
        if not self.samples:
            return [float("nan")] * self.max_tau
        return [h / self.samples for h in self.tail_hits]

    def tail_at(self, tau: int) -> float:
        return self.tail[tau - 1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tail"] = self.tail
        return d


def run_seed_sequence(master_seed: int, run_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(run_index)])


def run_streams(master_seed: int, run_index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(arrival stream, preamble stream) for one run."""
    a, b = run_seed_sequence(master_seed, run_index).spawn(2)
    return np.random.Generator(np.random.PCG64(a)), np.random.Generator(np.random.PCG64(b))


def resolve_slot(queues, arrivals, picks, n_preambles: int):
    """Apply one slot of contention to arrays shaped ``(..., N)``.

    Returns ``(active, success, new_queues)``. Devices are active when
    ``q + a >= 1``; an active device succeeds iff it is alone on its
    preamble within its own leading-index group.
    """
    queues = np.asarray(queues)
    load = queues + arrivals
    active = load >= 1
    batch_shape = load.shape[:-1]
    groups = int(np.prod(batch_shape)) if batch_shape else 1
    offset = np.arange(groups, dtype=np.int64).reshape(batch_shape + (1,)) * n_preambles
    keys = (picks + offset)[active]
    occupancy = np.bincount(keys, minlength=groups * n_preambles)
    success = np.zeros(load.shape, dtype=bool)
    success[active] = occupancy[keys] == 1
    return active, success, load - success


def step_slot(states: list[DeviceState], cfg: SystemConfig,
              rng: np.random.Generator | tuple[np.random.Generator, np.random.Generator]) -> SlotRecord:
    """Advance a list of device states by one slot, in place.

    ``rng`` is either a single generator used for both draws, or an
    ``(arrival, preamble)`` pair as returned by :func:`run_streams`.
    """
    if len(states) != cfg.n_devices:
        raise InvalidConfigError(f"expected {cfg.n_devices} device states, got {len(states)}")
    arr_rng, pre_rng = rng if isinstance(rng, tuple) else (rng, rng)
    q = np.fromiter((s.queue_len for s in states), dtype=np.int64, count=len(states))
    a = arr_rng.poisson(cfg.arrival_rate, cfg.n_devices)
    picks = pre_rng.integers(0, cfg.n_preambles, cfg.n_devices)
    active, success, q_new = resolve_slot(q, a, picks, cfg.n_preambles)
    for s, v in zip(states, q_new):
        s.queue_len = int(v)
    return SlotRecord(a, np.where(active, picks, -1), success, q_new)


def _thread_count(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "0") or 0)
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads


def _simulate_batch(cfg: SimConfig, runs: range) -> dict:
    """Simulate a contiguous block of runs together; return per-run counters."""
    sysc = cfg.system
    N, L, lam = sysc.n_devices, sysc.n_preambles, sysc.arrival_rate
    B, M = len(runs), cfg.max_tau
    streams = [run_streams(cfg.master_seed, r) for r in runs]

    q = np.zeros((B, N), dtype=np.int64)
    alive = np.ones(B, dtype=bool)
    hist = np.zeros((B, M + 1), dtype=np.int64)  # per-run counts of min(q, M)
    queue_sum = np.zeros(B, dtype=np.int64)
    attempts = np.zeros(B, dtype=np.int64)
    successes = np.zeros(B, dtype=np.int64)
    row_offset = (np.arange(B, dtype=np.int64) * (M + 1))[:, None]

    t = 0
    while t < cfg.total_slots:
        c = min(_CHUNK_SLOTS, cfg.total_slots - t)
        arrivals = np.stack([ar.poisson(lam, (c, N)) for ar, _ in streams], axis=1)
        picks = np.stack([pr.integers(0, L, (c, N)) for _, pr in streams], axis=1)
        for k in range(c):
            active, success, q = resolve_slot(q, arrivals[k], picks[k], L)
            if t + k >= cfg.warmup_slots:
                w = alive[:, None]
                attempts += (active & w).sum(axis=1)
                successes += (success & w).sum(axis=1)
                capped = np.minimum(q, M) + row_offset
                hist += np.bincount(capped.ravel(), minlength=B * (M + 1)).reshape(B, M + 1)
                queue_sum += q.sum(axis=1)
            if q.max() > DIVERGENCE_GUARD:
                blown = alive & (q.max(axis=1) > DIVERGENCE_GUARD)
                for b in np.flatnonzero(blown):
                    logger.warning("run %d diverged at slot %d", runs[b], t + k)
                alive &= ~blown
                q[blown] = 0
        t += c

    hist[~alive] = 0
    queue_sum[~alive] = 0
    attempts[~alive] = 0
    successes[~alive] = 0
    return {
        "hist": hist.sum(axis=0),
        "queue_sum": int(queue_sum.sum()),
        "attempts": int(attempts.sum()),
        "successes": int(successes.sum()),
        "completed": int(alive.sum()),
        "diverged": int((~alive).sum()),
    }


def run_simulation(cfg: SimConfig, threads: int | None = None) -> SimEstimate:
    """Run ``cfg.num_runs`` independent replications and pool their statistics.

    Queue lengths are sampled after each slot's update for every device on
    every slot past the warm-up. ``threads`` (default: ``$FAST_RETRIAL_THREADS``,
    0 meaning all cores) only affects wall time, never the result.
    """
    N = cfg.system.n_devices
    per_batch = max(1, _BATCH_ELEMENTS // N)
    blocks = [range(s, min(s + per_batch, cfg.num_runs)) for s in range(0, cfg.num_runs, per_batch)]
    workers = min(_thread_count(threads), len(blocks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda r: _simulate_batch(cfg, r), blocks))
    else:
        parts = [_simulate_batch(cfg, r) for r in blocks]

    hist = sum(p["hist"] for p in parts)
    completed = sum(p["completed"] for p in parts)
    samples = completed * cfg.retained_slots * N
    # hist[k] counts q == k for k < M, and q >= M in the last bin
    tail_hits = np.cumsum(hist[::-1])[::-1][1:]
    return SimEstimate(
        max_tau=cfg.max_tau,
        samples=int(samples),
        tail_hits=[int(x) for x in tail_hits],
        empty_count=int(hist[0]),
        queue_sum=sum(p["queue_sum"] for p in parts),
        tx_attempts=sum(p["attempts"] for p in parts),
        tx_successes=sum(p["successes"] for p in parts),
        arrival_rate=cfg.system.arrival_rate,
        completed_runs=completed,
        diverged_runs=sum(p["diverged"] for p in parts),
    )


def empirical_success_prob(est: SimEstimate) -> float:
    """Fraction of retained transmissions that did not collide."""
    if est.tx_attempts == 0:
        raise UndefinedRatioError("no transmissions recorded; success probability undefined")
    return est.tx_successes / est.tx_attempts


# --------------------------------------------------------------------------
# traces
#
# A trace file starts with a line ``# fastretrial-trace v1``, then a line
# ``# config <json>`` holding the SimConfig and run index, then a header
# comment, followed by one fixed-width record per device per slot:
#
#   cols  1-8   t   slot index (0-based; record describes slot t -> t+1)
#   cols 10-15  n   device index (0-based)
#   cols 17-20  a   arrivals during the slot
#   cols 22-27  pre preamble index, or "-" when the device stayed silent
#   col  29     s   1 if the block got through, else 0
#   cols 31-42  q   queue length after the slot
#
# Fields are right-aligned and separated by one space.

TRACE_MAGIC = "# fastretrial-trace v1"
_TRACE_FMT = "{:>8d} {:>6d} {:>4d} {:>6s} {:>1d} {:>12d}\n"


def iter_run(cfg: SimConfig, run_index: int) -> Iterator[SlotRecord]:
    """Replay run ``run_index`` slot by slot with the same draws as :func:`run_simulation`."""
    sysc = cfg.system
    arr_rng, pre_rng = run_streams(cfg.master_seed, run_index)
    q = np.zeros(sysc.n_devices, dtype=np.int64)
    t = 0
    while t < cfg.total_slots:
        c = min(_CHUNK_SLOTS, cfg.total_slots - t)
        arrivals = arr_rng.poisson(sysc.arrival_rate, (c, sysc.n_devices))
        picks = pre_rng.integers(0, sysc.n_preambles, (c, sysc.n_devices))
        for k in range(c):
            active, success, q = resolve_slot(q, arrivals[k], picks[k], sysc.n_preambles)
            yield SlotRecord(arrivals[k], np.where(active, picks[k], -1), success, q)
        t += c


def write_trace(cfg: SimConfig, run_index: int, fh: IO[str]) -> None:
    header = {"sim": cfg.to_dict(), "run_index": run_index}
    fh.write(TRACE_MAGIC + "\n")
    fh.write("# config " + json.dumps(header, sort_keys=True) + "\n")
    fh.write("#        t      n    a    pre s            q\n")
    for t, rec in enumerate(iter_run(cfg, run_index)):
        for n in range(cfg.system.n_devices):
            pre = int(rec.preambles[n])
            fh.write(_TRACE_FMT.format(t, n, int(rec.arrivals[n]), "-" if pre < 0 else str(pre),
                                       int(rec.success[n]), int(rec.queues[n])))


def read_trace(fh: IO[str]) -> tuple[dict, list[tuple[int, int, int, int | None, int, int]]]:
    """Parse a trace file into ``(header, records)``."""
    first = fh.readline().rstrip("\n")
    if first != TRACE_MAGIC:
        raise ValueError(f"not a trace file (got {first!r})")
    cfg_line = fh.readline()
    if not cfg_line.startswith("# config "):
        raise ValueError("trace is missing its config line")
    header = json.loads(cfg_line[len("# config "):])
    records = []
    for line in fh:
        if line.startswith("#") or not line.strip():
            continue
        t, n, a, pre, s, q = line.split()
        records.append((int(t), int(n), int(a), None if pre == "-" else int(pre), int(s), int(q)))
    return header, records


def verify_trace(header: dict, records) -> None:
    """Check a parsed trace against the queue recursion and collision rule.

    Raises ``AssertionError`` on the first inconsistency.
    """
    sysd = header["sim"]["system"]
    N, L = sysd["n_devices"], sysd["n_preambles"]
    q = [0] * N
    by_slot: dict[int, list] = {}
    for rec in records:
        by_slot.setdefault(rec[0], []).append(rec)
    for t in sorted(by_slot):
        recs = by_slot[t]
        assert len(recs) == N, f"slot {t}: expected {N} records"
        occupancy: dict[int, int] = {}
        for _, n, a, pre, s, _q in recs:
            if pre is not None:
                occupancy[pre] = occupancy.get(pre, 0) + 1
        for _, n, a, pre, s, q_next in recs:
            is_active = q[n] + a >= 1
            assert is_active == (pre is not None), f"slot {t} device {n}: activity mismatch"
            if pre is not None:
                assert 0 <= pre < L, f"slot {t} device {n}: preamble out of range"
            expected_s = int(pre is not None and occupancy[pre] == 1)
            assert s == expected_s, f"slot {t} device {n}: success flag mismatch"
            assert q_next == max(0, q[n] + a - s), f"slot {t} device {n}: queue law violated"
            q[n] = q_next
