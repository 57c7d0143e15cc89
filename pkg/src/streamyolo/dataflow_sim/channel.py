"""Bounded elastic channels and the chunked off-chip software FIFO."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence


class Channel:
    """FIFO with ready/valid semantics: a push needs free space, a pop needs
    a stored word. ``capacity=None`` means unbounded."""

    def __init__(self, name: str, capacity: int | None = None, trace: bool = False):
        if capacity is not None and capacity < 1:
            raise ValueError(f"channel {name}: capacity must be >= 1")
        self.name = name
        self.capacity = capacity
        self.q: deque = deque()
        self.high = 0
        self.pushed = 0
        self.popped = 0
        self.trace: list[tuple[int, int]] | None = [] if trace else None

    def __len__(self) -> int:
        return len(self.q)

    def space(self) -> float:
        if self.capacity is None:
            return math.inf
        return self.capacity - len(self.q)

    def push(self, value) -> None:
        q = self.q
        if self.capacity is not None and len(q) >= self.capacity:
            raise OverflowError(f"push into full channel {self.name}")
        q.append(value)
        self.pushed += 1
        if len(q) > self.high:
            self.high = len(q)

    def pop(self):
        self.popped += 1
        return self.q.popleft()

    def tick(self) -> bool:
        return False

    def record(self, cycle: int) -> None:
        if self.trace is None:
            return
        occ = len(self)
        if self.trace and self.trace[-1][0] == cycle:
            self.trace[-1] = (cycle, occ)
        elif not self.trace or self.trace[-1][1] != occ:
            self.trace.append((cycle, occ))


@dataclass(frozen=True)
class SoftFifoConfig:
    depth: int
    chunk_size: int = 256

    def __post_init__(self):
        if self.depth < 1 or self.chunk_size < 1:
            raise ValueError("soft FIFO depth and chunk_size must be >= 1")


class SoftFifoChannel(Channel):
    """Off-chip FIFO moved by chunked DMA transfers.

    Words are staged on-chip until a chunk fills, written to off-chip memory,
    and read back into an on-chip read buffer one chunk at a time. A chunk is
    readable only after it was completely written. Each DMA transaction costs
    ``max(chunk_size, dma_burst)`` word slots at ``rate`` words per cycle and
    per direction. The final partial chunk is zero-padded for transfer; the
    padding is trimmed on read.
    """

    def __init__(self, name: str, cfg: SoftFifoConfig, total_words: int, rate: float,
                 dma_burst: int, staging_chunks: int = 2, read_chunks: int = 2, trace: bool = False):
        super().__init__(name, None, trace)
        if total_words > cfg.depth * cfg.chunk_size:
            raise ValueError(f"{name}: stream of {total_words} words exceeds "
                             f"{cfg.depth} chunks of {cfg.chunk_size}")
        if rate <= 0:
            raise ValueError(f"{name}: DMA rate must be positive")
        self.cfg = cfg
        self.total = total_words
        self.rate = rate
        self.cost = max(cfg.chunk_size, dma_burst)
        self.staging_cap = staging_chunks * cfg.chunk_size
        self.read_cap = read_chunks * cfg.chunk_size
        self.staging: list = []
        self.write_q: deque = deque()  # full chunks awaiting the write DMA
        self.offchip: deque = deque()  # chunks resident off-chip
        self.read_inflight: list | None = None
        self.written = 0
        self.cntr_in = 0  # chunks fully written off-chip
        self.cntr_out = 0  # chunks read back on-chip
        self.w_credit = 0.0
        self.r_credit = 0.0
        self.w_busy: list | None = None

    # producer side -----------------------------------------------------
    def space(self) -> float:
        queued = len(self.staging) + sum(len(c) for c in self.write_q)
        if self.w_busy is not None:
            queued += len(self.w_busy)
        return self.staging_cap - queued

    def push(self, value) -> None:
        if self.space() <= 0:
            raise OverflowError(f"push into full soft FIFO {self.name}")
        self.staging.append(value)
        self.written += 1
        self.pushed += 1
        if len(self.staging) == self.cfg.chunk_size or self.written == self.total:
            self.write_q.append(self.staging)
            self.staging = []

    # consumer side: len/pop work on the on-chip read buffer -------------
    def __len__(self) -> int:
        return len(self.q)

    def tick(self) -> bool:
        """Advance both DMA engines by one cycle; True if anything moved."""
        moved = False
        # write engine: on-chip staging -> off-chip memory
        if self.w_busy is None and self.write_q:
            self.w_busy = self.write_q.popleft()
            self.w_credit = 0.0
        if self.w_busy is not None:
            self.w_credit += self.rate
            moved = True
            if self.w_credit >= self.cost:
                self.offchip.append(self.w_busy)
                self.cntr_in += 1
                self.w_busy = None
        # read engine: off-chip memory -> on-chip read buffer
        if self.read_inflight is None and self.offchip and self.cntr_out < self.cntr_in:
            if len(self.q) + len(self.offchip[0]) <= self.read_cap:
                self.read_inflight = self.offchip.popleft()
                self.r_credit = 0.0
        if self.read_inflight is not None:
            self.r_credit += self.rate
            moved = True
            if self.r_credit >= self.cost:
                self.q.extend(self.read_inflight)
                self.cntr_out += 1
                self.read_inflight = None
                if len(self.q) > self.high:
                    self.high = len(self.q)
        return moved

    @property
    def onchip_words(self) -> int:
        return len(self.staging) + len(self.q)


# --------------------------------------------------------------------------
# standalone producer/consumer harness
# --------------------------------------------------------------------------

@dataclass
class FifoRun:
    output: list
    cycles: int
    first_out: int
    last_out: int
    producer_stalls: int
    consumer_starved: int
    bandwidth_peak: float = 0.0
    starved_cycles: list[int] = field(default_factory=list)

    @property
    def steady_stalls(self) -> int:
        """Stall cycles once data is flowing: producer back-pressure plus
        consumer starvation after the first word."""
        return self.producer_stalls + self.consumer_starved


def _drive(fifo: Channel, stream: Sequence, stalls: Mapping[int, int], max_cycles: int,
           word_bits: int = 0, f_clk: float = 0.0) -> FifoRun:
    n = len(stream)
    out: list = []
    sent = 0
    cycle = 0
    hold = 0
    first = last = -1
    p_stall = c_starve = 0
    starved: list[int] = []
    peak = 0.0
    while len(out) < n:
        cycle += 1
        if cycle > max_cycles:
            raise RuntimeError("FIFO harness did not finish: deadlock")
        # consumer first: space it frees is visible to the producer this cycle
        if hold > 0:
            hold -= 1
        elif len(fifo):
            out.append(fifo.pop())
            last = cycle
            if first < 0:
                first = cycle
            hold = stalls.get(len(out), 0)
        elif first >= 0:
            c_starve += 1
            starved.append(cycle)
        if sent < n:
            if fifo.space() >= 1:
                fifo.push(stream[sent])
                sent += 1
            else:
                p_stall += 1
        fifo.tick()
        if word_bits and f_clk and isinstance(fifo, SoftFifoChannel):
            # two engines at ``rate`` words/cycle each while busy
            busy = (fifo.w_busy is not None) + (fifo.read_inflight is not None)
            peak = max(peak, busy * fifo.rate * word_bits * f_clk)
    return FifoRun(out, cycle, first, last, p_stall, c_starve, peak, starved)


def simulate_soft_fifo(cfg: SoftFifoConfig, in_stream: Iterable, *, rate: float, dma_burst: int,
                       stalls: Mapping[int, int] | None = None, word_bits: int = 16,
                       f_clk: float = 200e6, max_cycles: int | None = None) -> FifoRun:
    """Stream words through a software FIFO.

    The producer offers one word per cycle; the consumer takes one per cycle
    except that after its i-th word it pauses ``stalls[i]`` cycles. A stream
    shorter than ``depth * chunk_size`` ends in a padded partial chunk.
    """
    stream = list(in_stream)
    if len(stream) > cfg.depth * cfg.chunk_size:
        raise ValueError(f"stream of {len(stream)} words exceeds {cfg.depth} x {cfg.chunk_size}")
    stalls = dict(stalls or {})
    fifo = SoftFifoChannel("soft", cfg, len(stream), rate, dma_burst)
    budget = max_cycles or 10 * (len(stream) + sum(stalls.values())) + 100 * math.ceil(fifo.cost / rate) + 1000
    return _drive(fifo, stream, stalls, budget, word_bits, f_clk)


def simulate_ideal_fifo(capacity: int, in_stream: Iterable, *, stalls: Mapping[int, int] | None = None,
                        max_cycles: int | None = None) -> FifoRun:
    """Same harness over a plain on-chip FIFO of the given capacity."""
    stream = list(in_stream)
    stalls = dict(stalls or {})
    budget = max_cycles or 10 * (len(stream) + sum(stalls.values())) + 1000
    return _drive(Channel("ideal", capacity), stream, stalls, budget)
