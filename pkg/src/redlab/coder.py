"""Arithmetic coder turning sequential models into decodable bitstreams.

The coder keeps 64-bit ``low``/``high`` registers and codes with integer
frequency tables.  Model probabilities are quantised to 32 fractional bits
(every symbol of positive probability keeps at least one count); the
add-1/2 mixture predictor is already rational and is used exactly.  Encoder
and decoder derive their tables from the same integer state, so they never
diverge.

Container layout (``URLB``)::

    magic "URLB" | version byte | varint header length | header JSON
    | varint n | varint payload bit count | payload, MSB-first
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .codecs import EstimateGrid, IdealCode, LengthModel, MixtureCode, TwoStageCode, build_grid
from .family import FamilyError, Kind, ParamFamily, ParamVector, SequenceSample

STATE_BITS = 64
PROB_BITS = 32
MAGIC = b"URLB"
VERSION = 1


class CodingError(ValueError):
    pass


class TruncatedStreamError(CodingError):
    pass


@dataclass(frozen=True)
class Bitstream:
    data: bytes
    bit_count: int

    def bits(self) -> Iterator[int]:
        for i in range(self.bit_count):
            yield (self.data[i >> 3] >> (7 - (i & 7))) & 1

    @classmethod
    def from_bits(cls, bits: list[int]) -> "Bitstream":
        buf = bytearray((len(bits) + 7) // 8)
        for i, b in enumerate(bits):
            if b:
                buf[i >> 3] |= 0x80 >> (i & 7)
        return cls(bytes(buf), len(bits))


# -- frequency tables ----------------------------------------------------------


def quantise(probs: np.ndarray) -> list[int]:
    """Integer frequencies summing to at most ``2^PROB_BITS``; zero stays zero."""
    scale = 1 << PROB_BITS
    freqs = [0 if p <= 0 else max(1, int(p * scale)) for p in probs]
    excess = sum(freqs) - scale
    if excess > 0:
        # only reachable when many floors of 1 were applied; shave the largest
        i = max(range(len(freqs)), key=freqs.__getitem__)
        freqs[i] -= excess
    return freqs


class _Predictor:
    """Sequential integer frequency tables for a supported model."""

    def __init__(self, model: LengthModel, gamma: ParamVector | None = None):
        self.family = model.family
        self.k = self.family.k
        if isinstance(model, MixtureCode):
            self.mode = "mixture"
            shape = (self.k,) if self.family.kind is Kind.MEMORYLESS else (self.k, self.k)
            self.counts = np.zeros(shape, dtype=np.int64)
        elif isinstance(model, IdealCode) or gamma is not None:
            theta = gamma if gamma is not None else model.theta
            self.mode = "ideal"
            if self.family.kind is Kind.MEMORYLESS:
                self.first = self.rows = quantise(theta.probs)
            else:
                self.first = quantise(theta.stationary)
                self.rows = [quantise(r) for r in theta.probs]
        else:
            raise CodingError(f"model kind {model.kind!r} has no sequential form")
        self.prev: int | None = None

    def freqs(self) -> list[int]:
        if self.mode == "mixture":
            if self.family.kind is Kind.MEMORYLESS:
                c = self.counts
            elif self.prev is None:
                return [1] * self.k
            else:
                c = self.counts[self.prev]
            # (count + 1/2) / (t + k/2), scaled by 2
            return [int(2 * v + 1) for v in c]
        if self.family.kind is Kind.MEMORYLESS:
            return self.rows
        return self.first if self.prev is None else self.rows[self.prev]

    def update(self, symbol: int) -> None:
        if self.mode == "mixture":
            if self.family.kind is Kind.MEMORYLESS:
                self.counts[symbol] += 1
            elif self.prev is not None:
                self.counts[self.prev, symbol] += 1
        self.prev = symbol


# -- core coder ----------------------------------------------------------------

_FULL = 1 << STATE_BITS
_HALF = _FULL >> 1
_QUARTER = _HALF >> 1
_MASK = _FULL - 1


def _narrow(low: int, high: int, freqs: list[int], symbol: int) -> tuple[int, int]:
    total = sum(freqs)
    lo_c = sum(freqs[:symbol])
    hi_c = lo_c + freqs[symbol]
    span = high - low + 1
    return low + lo_c * span // total, low + hi_c * span // total - 1


def _encode_symbols(symbols: np.ndarray, predictor: _Predictor) -> list[int]:
    low, high, pending = 0, _MASK, 0
    out: list[int] = []
    for s in symbols:
        s = int(s)
        freqs = predictor.freqs()
        if freqs[s] == 0:
            raise CodingError(f"symbol {s} has zero probability under the model")
        low, high = _narrow(low, high, freqs, s)
        while True:
            if high < _HALF:
                out.append(0)
                out.extend([1] * pending)
                pending = 0
            elif low >= _HALF:
                out.append(1)
                out.extend([0] * pending)
                pending = 0
            elif low >= _QUARTER and high < _HALF + _QUARTER:
                pending += 1
                low -= _QUARTER
                high -= _QUARTER
            else:
                break
            low = (low << 1) & _MASK
            high = ((high << 1) & _MASK) | 1
        predictor.update(s)
    # low < HALF <= high: "1" followed by zeros lies in [low, high]; pending bits are zeros too
    out.append(1)
    while out and out[-1] == 0:
        out.pop()
    return out


def _decode_symbols(bits: Iterator[int], n: int, predictor: _Predictor) -> np.ndarray:
    def next_bit() -> int:
        return next(bits, 0)

    low, high = 0, _MASK
    code = 0
    for _ in range(STATE_BITS):
        code = (code << 1) | next_bit()
    out = np.empty(n, dtype=np.int64)
    for t in range(n):
        freqs = predictor.freqs()
        total = sum(freqs)
        span = high - low + 1
        value = ((code - low + 1) * total - 1) // span
        cum = 0
        for s, f in enumerate(freqs):
            if cum + f > value:
                break
            cum += f
        else:
            raise CodingError("corrupt stream")
        low, high = _narrow(low, high, freqs, s)
        while True:
            if high < _HALF:
                pass
            elif low >= _HALF:
                low -= _HALF
                high -= _HALF
                code -= _HALF
            elif low >= _QUARTER and high < _HALF + _QUARTER:
                low -= _QUARTER
                high -= _QUARTER
                code -= _QUARTER
            else:
                break
            low = low << 1
            high = (high << 1) | 1
            code = (code << 1) | next_bit()
        predictor.update(s)
        out[t] = s
    return out


# -- public API ----------------------------------------------------------------


def encode(x: SequenceSample, model: LengthModel) -> Bitstream:
    """Arithmetic-code ``x``; two-stage models prefix the ``m`` index bits verbatim."""
    if x.family != model.family:
        raise FamilyError("sequence family does not match the model")
    if isinstance(model, TwoStageCode):
        if type(model) is not TwoStageCode:
            raise CodingError("conditional two-stage codes have no sequential form")
        idx = int(model.estimate(x.symbols[None, :])[0])
        head = [(idx >> (model.m - 1 - i)) & 1 for i in range(model.m)]
        body = _encode_symbols(x.symbols, _Predictor(model, model.grid.point(idx)))
        return Bitstream.from_bits(head + body)
    return Bitstream.from_bits(_encode_symbols(x.symbols, _Predictor(model)))


def decode(stream: Bitstream, model: LengthModel, n: int) -> SequenceSample:
    if len(stream.data) * 8 < stream.bit_count:
        raise TruncatedStreamError("stream shorter than its declared bit count")
    bits = stream.bits()
    if isinstance(model, TwoStageCode):
        if stream.bit_count < model.m:
            raise TruncatedStreamError("stream ends inside the estimate index")
        idx = 0
        for _ in range(model.m):
            idx = (idx << 1) | next(bits)
        predictor = _Predictor(model, model.grid.point(idx))
    else:
        predictor = _Predictor(model)
    return SequenceSample(model.family, _decode_symbols(bits, n, predictor))


# -- container -----------------------------------------------------------------


def _write_varint(buf: io.BytesIO, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        buf.write(bytes([byte | (0x80 if value else 0)]))
        if not value:
            return


def _read_varint(buf: io.BytesIO) -> int:
    shift = value = 0
    while True:
        b = buf.read(1)
        if not b:
            raise TruncatedStreamError("truncated varint")
        value |= (b[0] & 0x7F) << shift
        if not b[0] & 0x80:
            return value
        shift += 7


def model_header(model: LengthModel) -> dict:
    head = model.family.to_dict() | {"model": model.kind}
    if isinstance(model, IdealCode):
        head["probs"] = model.theta.probs.ravel().tolist()
    if isinstance(model, TwoStageCode):
        head["m"] = model.m
    return head


def model_from_header(head: dict) -> LengthModel:
    family = ParamFamily(Kind(head["kind"]), int(head["k"]))
    kind = head["model"]
    if kind == "ideal":
        return IdealCode(ParamVector(family, np.asarray(head["probs"], dtype=float).reshape(family.param_shape)))
    if kind == "mixture":
        return MixtureCode(family)
    if kind == "two_stage":
        return TwoStageCode(build_grid(family, int(head["m"])))
    raise CodingError(f"unsupported model {kind!r} in container")


def pack(stream: Bitstream, model: LengthModel, n: int) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(bytes([VERSION]))
    header = json.dumps(model_header(model), separators=(",", ":")).encode()
    _write_varint(buf, len(header))
    buf.write(header)
    _write_varint(buf, n)
    _write_varint(buf, stream.bit_count)
    buf.write(stream.data)
    return buf.getvalue()


def unpack(blob: bytes) -> tuple[Bitstream, LengthModel, int]:
    buf = io.BytesIO(blob)
    if buf.read(4) != MAGIC:
        raise CodingError("not a URLB container")
    version = buf.read(1)
    if not version or version[0] != VERSION:
        raise CodingError("unsupported container version")
    size = _read_varint(buf)
    header = buf.read(size)
    if len(header) < size:
        raise TruncatedStreamError("truncated header")
    try:
        model = model_from_header(json.loads(header))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        if isinstance(exc, CodingError):
            raise
        raise CodingError(f"bad container header: {exc}") from exc
    n = _read_varint(buf)
    bit_count = _read_varint(buf)
    data = buf.read()
    if len(data) < (bit_count + 7) // 8:
        raise TruncatedStreamError("payload shorter than declared")
    return Bitstream(data, bit_count), model, n


def ideal_bits(x: SequenceSample, model: LengthModel) -> float:
    return model.length(x)


def overhead(x: SequenceSample, model: LengthModel) -> float:
    """Actual minus ideal length, in bits."""
    return encode(x, model).bit_count - model.length(x)


def ceil_bound(x: SequenceSample, model: LengthModel) -> int:
    """``ceil(ideal) + 2``, with a guard against ideal lengths a rounding error above an integer."""
    ideal = model.length(x)
    return math.ceil(ideal - 1e-9) + 2
