"""One process per graph node. Every process moves at most ``p`` words per
cycle on each side and only pushes into channels with free space.

Streams are NHWC word sequences. A process ``step`` returns True when any
of its state changed during the cycle; a cycle in which nothing changes
anywhere means the system is stuck for good.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from ..graph_ir import NodeSpec, TensorShape, split_channels
from ..quantizer import (
    hardswish_fixed,
    leaky_fixed,
    rescale,
    round_shift,
    saturate,
    slope_fixed,
)
from .channel import Channel


class Process:
    kind = "?"

    def __init__(self, node: NodeSpec, p: int, n_in: int, n_out: int):
        self.id = node.id
        self.node = node
        self.p = p
        self.ins: list[Channel] = []
        self.outs: list[Channel] = []
        self.n_in = n_in  # words to consume over the frame
        self.n_out = n_out  # words to produce
        self.consumed = 0
        self.produced = 0
        self.first_in: int | None = None
        self.first_out: int | None = None
        self.last_out: int | None = None

    # -- helpers -----------------------------------------------------------
    def room(self) -> float:
        if not self.outs:
            return math.inf
        return min(ch.space() for ch in self.outs)

    def _took(self, cycle: int, n: int = 1) -> None:
        if n:
            self.consumed += n
            if self.first_in is None:
                self.first_in = cycle

    def _emit(self, value: int, cycle: int) -> None:
        for ch in self.outs:
            ch.push(value)
        self.produced += 1
        if self.first_out is None:
            self.first_out = cycle
        self.last_out = cycle

    def done(self) -> bool:
        return self.produced >= self.n_out and self.consumed >= self.n_in

    def status(self) -> str:
        return f"{self.id} ({self.kind}): in {self.consumed}/{self.n_in}, out {self.produced}/{self.n_out}"

    def step(self, cycle: int) -> bool:  # pragma: no cover - abstract
        raise NotImplementedError


class InputProc(Process):
    kind = "Input"

    def __init__(self, node, p, data: np.ndarray):
        flat = [int(v) for v in np.asarray(data).ravel()]
        super().__init__(node, p, 0, len(flat))
        self.data = flat

    def step(self, cycle):
        n = min(self.p, self.room(), self.n_out - self.produced)
        for _ in range(int(n)):
            self._emit(self.data[self.produced], cycle)
        return n > 0


class MapProc(Process):
    """Word-wise process: routing copies and the two activations."""

    def __init__(self, node, p, n_words: int, fn=None):
        super().__init__(node, p, n_words, n_words)
        self.kind = node.kind
        self.fn = fn

    def step(self, cycle):
        src = self.ins[0]
        n = int(min(self.p, len(src), self.room()))
        fn = self.fn
        for _ in range(n):
            v = src.pop()
            self._emit(fn(v) if fn else v, cycle)
        self._took(cycle, n)
        return n > 0


class OutputProc(Process):
    kind = "Output"

    def __init__(self, node, p, shape: TensorShape):
        super().__init__(node, p, shape.size, 0)
        self.shape = shape
        self.words: list[int] = []

    def step(self, cycle):
        src = self.ins[0]
        n = min(self.p, len(src))
        for _ in range(n):
            self.words.append(src.pop())
        if n:
            self._took(cycle, n)
            if self.first_out is None:
                self.first_out = cycle
            self.last_out = cycle
        return n > 0

    def done(self):
        return self.consumed >= self.n_in

    def tensor(self) -> np.ndarray:
        return np.array(self.words, dtype=np.int64).reshape(self.shape.as_tuple())


class SplitProc(Process):
    """Demultiplexer: channel group g of every pixel goes to output g."""

    kind = "Split"

    def __init__(self, node, p, shape: TensorShape, n_outputs: int):
        super().__init__(node, p, shape.size, shape.size)
        groups = split_channels(node, shape.c, n_outputs)
        self.route = [g for g, size in enumerate(groups) for _ in range(size)]
        self.c = shape.c

    def step(self, cycle):
        src = self.ins[0]
        n = 0
        while n < self.p and len(src):
            dst = self.outs[self.route[self.consumed % self.c]]
            if dst.space() < 1:
                break
            dst.push(src.pop())
            self._took(cycle)
            self.produced += 1
            if self.first_out is None:
                self.first_out = cycle
            self.last_out = cycle
            n += 1
        return n > 0


class ConcatProc(Process):
    """Multiplexer reading each pixel's channels from its inputs in declared
    order, rescaling every word to the output format."""

    kind = "Concat"

    def __init__(self, node, p, in_channels: list[int], hw: int, f_in, f_out, bits):
        c = sum(in_channels)
        super().__init__(node, p, hw * c, hw * c)
        self.sched = [i for i, ci in enumerate(in_channels) for _ in range(ci)]
        self.c = c
        self.f_in, self.f_out, self.bits = f_in, f_out, bits

    def step(self, cycle):
        n = 0
        room = self.room()
        while n < self.p and n < room and self.produced < self.n_out:
            i = self.sched[self.produced % self.c]
            src = self.ins[i]
            if not len(src):
                break
            v = saturate(rescale(src.pop(), self.f_in[i], self.f_out), self.bits)
            self._took(cycle)
            self._emit(v, cycle)
            n += 1
        return n > 0


class AddProc(Process):
    kind = "Add"

    def __init__(self, node, p, n_words, f_in, f_out, bits):
        super().__init__(node, p, n_words * len(f_in), n_words)
        self.f_in, self.f_out, self.bits = f_in, f_out, bits

    def step(self, cycle):
        n = 0
        room = self.room()
        while n < self.p and n < room and all(len(ch) for ch in self.ins):
            total = sum(rescale(ch.pop(), self.f_in[i], self.f_out) for i, ch in enumerate(self.ins))
            self._took(cycle, len(self.ins))
            self._emit(saturate(total, self.bits), cycle)
            n += 1
        return n > 0


class ResizeProc(Process):
    """Nearest-neighbour upsampling from a two-row input cache."""

    kind = "Resize"

    def __init__(self, node, p, shape: TensorShape):
        s = node.scale_factor
        super().__init__(node, p, shape.size, shape.size * s * s)
        self.h, self.w, self.c, self.s = shape.h, shape.w, shape.c, s
        self.buf: list[int] = []
        self.cap = 2 * shape.w * shape.c
        self.high = 0

    def _src(self, j: int) -> int:
        wo = self.w * self.s
        y, rest = divmod(j, wo * self.c)
        x, c = divmod(rest, self.c)
        return ((y // self.s) * self.w + x // self.s) * self.c + c

    def _first_needed(self) -> int:
        if self.produced >= self.n_out:
            return self.n_in
        y = self.produced // (self.w * self.s * self.c)
        return (y // self.s) * self.w * self.c

    def step(self, cycle):
        moved = False
        n = 0
        room = self.room()
        while n < self.p and n < room and self.produced < self.n_out:
            src = self._src(self.produced)
            if src >= self.consumed:
                break
            self._emit(self.buf[src], cycle)
            n += 1
        moved |= n > 0
        src_ch = self.ins[0]
        n = 0
        while (n < self.p and len(src_ch) and self.consumed < self.n_in
               and self.consumed - self._first_needed() < self.cap):
            self.buf.append(src_ch.pop())
            self._took(cycle)
            n += 1
        self.high = max(self.high, self.consumed - self._first_needed())
        return moved or n > 0


class WindowProc(Process):
    """Sliding-window generator feeding a latched compute engine.

    The generator keeps only the words some future window still needs,
    at most ``((K-1)*W + K) * C``. The engine latches one window, spends
    ``work / p`` cycles on it and hands its results to the output register;
    it can only retire a window once the previous results have left.
    """

    def __init__(self, node, p, shape: TensorShape, out_shape: TensorShape, work: int):
        super().__init__(node, p, shape.size, out_shape.size)
        self.kind = node.kind
        self.h, self.w, self.c = shape.h, shape.w, shape.c
        self.ho, self.wo = out_shape.h, out_shape.w
        self.k, self.stride = node.kernel_size, node.strides
        self.top, self.left = node.pads[0], node.pads[1]
        self.cap = ((self.k - 1) * self.w + self.k) * self.c
        self.work = work
        self.buf = np.zeros(shape.size, dtype=np.int64)
        self.img = self.buf.reshape(shape.h, shape.w, shape.c)
        self.pix = 0  # next pixel to latch
        self.busy = False
        self.done_work = 0
        self.result: list[int] | None = None
        self.pending: deque = deque()
        self.window_high = 0
        self.engine_cycles = 0

    def _rows_cols(self, pix):
        oy, ox = divmod(pix, self.wo)
        y0, x0 = oy * self.stride - self.top, ox * self.stride - self.left
        return y0, x0

    def _last_needed(self, pix) -> int:
        y0, x0 = self._rows_cols(pix)
        ry = min(y0 + self.k - 1, self.h - 1)
        rx = min(x0 + self.k - 1, self.w - 1)
        if ry < 0 or rx < 0:
            return -1
        return (ry * self.w + rx) * self.c + self.c - 1

    def _start(self, pix) -> int:
        y0, x0 = self._rows_cols(pix)
        return (max(y0, 0) * self.w + max(x0, 0)) * self.c

    def _first_needed(self, pix) -> int:
        if pix >= self.ho * self.wo:
            return self.n_in
        # top padding clips several output rows to input row 0, so the next
        # output row may still need words left of this window
        nxt = (pix // self.wo + 1) * self.wo
        if nxt < self.ho * self.wo:
            return min(self._start(pix), self._start(nxt))
        return self._start(pix)

    def occupancy(self) -> int:
        return max(self.consumed - self._first_needed(self.pix), 0)

    def _window(self, pix):
        y0, x0 = self._rows_cols(pix)
        ya, yb = max(y0, 0), min(y0 + self.k, self.h)
        xa, xb = max(x0, 0), min(x0 + self.k, self.w)
        return self.img[ya:yb, xa:xb, :], (ya - y0, yb - y0, xa - x0, xb - x0)

    def compute(self, pix) -> list[int]:  # pragma: no cover - abstract
        raise NotImplementedError

    def step(self, cycle):
        moved = False
        # output register -> channel
        n = int(min(self.p, len(self.pending), self.room()))
        for _ in range(n):
            self._emit(self.pending.popleft(), cycle)
        moved |= n > 0
        # engine
        if not self.busy and self.pix < self.ho * self.wo and self.consumed > self._last_needed(self.pix):
            self.result = self.compute(self.pix)
            self.busy = True
            self.done_work = 0
            self.pix += 1
            moved = True
        if self.busy:
            if self.done_work < self.work:
                self.done_work += self.p
                self.engine_cycles += 1
                moved = True
            if self.done_work >= self.work and not self.pending:
                self.pending.extend(self.result)
                self.result = None
                self.busy = False
                moved = True
        # generator intake
        src = self.ins[0]
        n = 0
        first = self._first_needed(self.pix)
        while n < self.p and len(src) and self.consumed < self.n_in:
            if self.consumed - first >= self.cap:
                break
            self.buf[self.consumed] = src.pop()
            self._took(cycle)
            n += 1
        occ = self.occupancy()
        if occ > self.window_high:
            self.window_high = occ
        return moved or n > 0


class ConvProc(WindowProc):
    def __init__(self, node, p, shape, out_shape, weights: np.ndarray, requant: tuple[int, int], bits: int):
        f = node.filters
        super().__init__(node, p, shape, out_shape, shape.c * f)
        # (ky, kx, c, f) so a window slice contracts directly
        self.wt = np.ascontiguousarray(np.asarray(weights, dtype=np.int64).transpose(2, 3, 1, 0))
        self.mult, self.shift = requant
        self.bits = bits

    def compute(self, pix):
        win, (ka, kb, kxa, kxb) = self._window(pix)
        acc = np.tensordot(win, self.wt[ka:kb, kxa:kxb], axes=([0, 1, 2], [0, 1, 2]))
        m, s, b = self.mult, self.shift, self.bits
        return [saturate(round_shift(int(a) * m, s), b) for a in acc.tolist()]


class MaxPoolProc(WindowProc):
    def __init__(self, node, p, shape, out_shape):
        super().__init__(node, p, shape, out_shape, shape.c)

    def compute(self, pix):
        win, _ = self._window(pix)
        if win.size == 0:
            raise ValueError(f"{self.id}: window {pix} lies entirely in padding")
        return [int(v) for v in win.max(axis=(0, 1)).tolist()]


def hardswish_fn(f_in: int, f_out: int, bits: int):
    return lambda v: hardswish_fixed(v, f_in, f_out, bits)


def leaky_fn(slope: float, f_in: int, f_out: int, bits: int):
    sq = slope_fixed(slope)
    return lambda v: leaky_fixed(v, sq, f_in, f_out, bits)
