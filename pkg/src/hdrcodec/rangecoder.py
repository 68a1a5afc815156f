"""Carry-less byte-oriented range coder with 16-bit cumulative frequencies.

The coder keeps a 32-bit (low, range) state and renormalizes a byte at a
time, trading a sliver of code space for carry-free output (Subbotin's
scheme). Symbol models are :class:`SymbolTable` objects: a contiguous
integer support plus one reserved escape slot; out-of-support values are
escape-coded followed by a raw 16-bit value, so coding is lossless for any
symbol in [-32768, 32767].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TOP = 1 << 24
_BOT = 1 << 16
_MASK = 0xFFFFFFFF

FREQ_BITS = 16
FREQ_TOTAL = 1 << FREQ_BITS
RAW_SYMBOL_MIN = -(1 << 15)
RAW_SYMBOL_MAX = (1 << 15) - 1


class RangeCoderError(ValueError):
    """Raised on unencodable symbols or corrupt/truncated streams."""


class RangeEncoder:
    def __init__(self):
        self._low = 0
        self._range = _MASK
        self._out = bytearray()

    def encode(self, cum_lo: int, cum_hi: int, total: int) -> None:
        if not 0 <= cum_lo < cum_hi <= total <= FREQ_TOTAL:
            raise RangeCoderError("bad cumulative frequencies")
        r = self._range // total
        self._low = (self._low + r * cum_lo) & _MASK
        self._range = r * (cum_hi - cum_lo)
        self._normalize()

    def _normalize(self):
        low, rng = self._low, self._range
        while True:
            if (low ^ (low + rng)) & _MASK < _TOP:
                pass
            elif rng < _BOT:
                rng = (-low) & (_BOT - 1)
            else:
                break
            self._out.append((low >> 24) & 0xFF)
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK
        self._low, self._range = low, rng

    def finish(self) -> bytes:
        low = self._low
        for _ in range(4):
            self._out.append((low >> 24) & 0xFF)
            low = (low << 8) & _MASK
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._low = 0
        self._range = _MASK
        self._code = 0
        for _ in range(4):
            self._code = (self._code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise RangeCoderError("truncated range-coded stream")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode_target(self, total: int) -> int:
        """Cumulative-frequency target for the next symbol; caller must then
        call :meth:`consume` with the located symbol's interval."""
        self._r = self._range // total
        target = ((self._code - self._low) & _MASK) // self._r
        if target >= total:
            raise RangeCoderError("corrupt range-coded stream")
        return target

    def consume(self, cum_lo: int, cum_hi: int) -> None:
        self._low = (self._low + self._r * cum_lo) & _MASK
        self._range = self._r * (cum_hi - cum_lo)
        self._normalize()

    def _normalize(self):
        low, rng, code = self._low, self._range, self._code
        while True:
            if (low ^ (low + rng)) & _MASK < _TOP:
                pass
            elif rng < _BOT:
                rng = (-low) & (_BOT - 1)
            else:
                break
            code = ((code << 8) | self._next_byte()) & _MASK
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK
        self._low, self._range, self._code = low, rng, code


# ---------------------------------------------------------------------------
# Symbol models
# ---------------------------------------------------------------------------


@dataclass
class SymbolTable:
    """Quantized pmf over values offset..offset+n-1 plus a trailing escape.

    ``cum`` holds n+2 cumulative frequencies (uint32) with cum[0] == 0 and
    cum[-1] == FREQ_TOTAL; slot i covers value offset+i, slot n is escape.
    """

    offset: int
    cum: np.ndarray

    @property
    def n_regular(self) -> int:
        return len(self.cum) - 2


def quantize_pmf(pmf: np.ndarray, total: int = FREQ_TOTAL) -> np.ndarray:
    """Integer frequencies >= 1 summing exactly to ``total`` (largest
    remainder apportionment)."""
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.ndim != 1 or len(pmf) == 0:
        raise ValueError("pmf must be a non-empty vector")
    if len(pmf) > total:
        raise ValueError("more symbols than frequency slots")
    p = np.maximum(pmf, 0.0)
    s = p.sum()
    p = np.full_like(p, 1.0 / len(p)) if s <= 0 else p / s
    scaled = p * total
    freqs = np.maximum(1, np.floor(scaled).astype(np.int64))
    diff = total - int(freqs.sum())
    if diff > 0:
        order = np.argsort(-(scaled - np.floor(scaled)))
        bump, rem = divmod(diff, len(p))
        freqs += bump
        freqs[order[:rem]] += 1
    elif diff < 0:
        order = np.argsort(-freqs)
        for i in order:
            take = min(int(freqs[i]) - 1, -diff)
            freqs[i] -= take
            diff += take
            if diff == 0:
                break
        if diff != 0:
            raise ValueError("cannot satisfy frequency budget")
    return freqs


def build_table(pmf: np.ndarray, offset: int) -> SymbolTable:
    """Table over the support starting at ``offset``, with an escape slot
    appended at the 2^-16 probability floor."""
    pmf = np.asarray(pmf, dtype=np.float64)
    s = pmf.sum()
    norm = pmf / s if s > 0 else np.full_like(pmf, 1.0 / max(len(pmf), 1))
    freqs = quantize_pmf(np.concatenate([norm, [2.0**-16]]))
    cum = np.zeros(len(freqs) + 1, dtype=np.uint32)
    np.cumsum(freqs, out=cum[1:])
    return SymbolTable(offset=int(offset), cum=cum)


_RAW_TOTAL = 1 << 16


def _advance(provider, symbol):
    """Next table from an iterator or a symbol-driven generator."""
    if hasattr(provider, "send"):
        return provider.send(symbol)
    return next(provider)


def range_encode(symbols, tables) -> bytes:
    """Encode integer symbols against per-position tables.

    ``tables`` is an iterable (or generator accepting ``send(symbol)``)
    yielding a :class:`SymbolTable` per symbol. Empty input encodes to an
    empty payload.
    """
    symbols = list(int(s) for s in symbols)
    if not symbols:
        return b""
    enc = RangeEncoder()
    it = iter(tables) if not hasattr(tables, "send") else tables
    table = next(it)
    for i, sym in enumerate(symbols):
        cum = table.cum
        idx = sym - table.offset
        n = table.n_regular
        if 0 <= idx < n:
            enc.encode(int(cum[idx]), int(cum[idx + 1]), int(cum[-1]))
        else:
            if not RAW_SYMBOL_MIN <= sym <= RAW_SYMBOL_MAX:
                raise RangeCoderError(f"symbol {sym} outside escapable range")
            enc.encode(int(cum[n]), int(cum[n + 1]), int(cum[-1]))
            raw = sym - RAW_SYMBOL_MIN
            enc.encode(raw, raw + 1, _RAW_TOTAL)
        if i + 1 < len(symbols):
            table = _advance(it, sym)
    return enc.finish()


def range_decode(data: bytes, tables) -> list[int]:
    """Decode symbols until the table provider is exhausted.

    For autoregressive models pass a generator: it yields the next table and
    receives each decoded symbol via ``send``, so it can only ever depend on
    the past.
    """
    it = iter(tables) if not hasattr(tables, "send") else tables
    try:
        table = next(it)
    except StopIteration:
        return []
    dec = RangeDecoder(data)
    out: list[int] = []
    while True:
        cum = table.cum
        target = dec.decode_target(int(cum[-1]))
        idx = int(np.searchsorted(cum, target, side="right")) - 1
        dec.consume(int(cum[idx]), int(cum[idx + 1]))
        if idx == table.n_regular:  # escape
            raw = dec.decode_target(_RAW_TOTAL)
            dec.consume(raw, raw + 1)
            sym = raw + RAW_SYMBOL_MIN
        else:
            sym = idx + table.offset
        out.append(sym)
        try:
            table = _advance(it, sym)
        except StopIteration:
            return out
