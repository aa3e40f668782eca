"""Fusion-center state machine for the transmit-then-verify scheme.

A session obtains the message one chunk at a time.  For every attempt the
current transmitter sends the chunk with code G1, the fusion center draws a
brand-new random binning of the whole chunk space, polls k fresh sensors for
the bin index of the chunk (code G2) and accepts on a strict majority.  An
accepted chunk keeps the transmitter; a declined one replaces it.

Messages, chunks and bins are 0-based: W in [0, M), chunks in [0, 2^b) and
bins in [0, j).  Chunks are the base-2^b digits of W, most significant first.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analysis
from .adversary import HONEST, AdversaryView, Arbitrary, Strategy, StrategyError, Substitute
from .channel import ChannelCode, Dmc, decode, encode, transmit
from .kernels import CELL_NAMES, EVENT_NAMES

EXPLICIT_BINNING_LIMIT = 2**20
DEFAULT_MAX_ATTEMPTS = 10**6


class ParamsError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolParams:
    message_bits: int
    chunk_count: int
    block_length: int
    bin_count: int
    verifier_count: int
    verify_block_length: int
    code_error: float
    byzantine_fraction: float

    def __post_init__(self):
        ints = ("message_bits", "chunk_count", "block_length", "bin_count", "verifier_count", "verify_block_length")
        for name in ints:
            val = getattr(self, name)
            if isinstance(val, bool) or int(val) != val:
                raise ParamsError(f"{name} must be an integer, got {val!r}")
            object.__setattr__(self, name, int(val))
        if self.chunk_count < 1:
            raise ParamsError("chunk_count (v) must be >= 1")
        if self.message_bits < 1:
            raise ParamsError("message_bits must be >= 1")
        if self.message_bits % self.chunk_count:
            raise ParamsError(
                f"message_bits={self.message_bits} is not divisible by chunk_count={self.chunk_count}"
            )
        if self.block_length < 1 or self.block_length % self.chunk_count:
            raise ParamsError(
                f"block_length={self.block_length} must be a positive multiple of chunk_count={self.chunk_count}"
            )
        if self.bin_count < 2:
            raise ParamsError("bin_count (j) must be >= 2")
        if self.verifier_count < 1:
            raise ParamsError("verifier_count (k) must be >= 1")
        if self.verify_block_length < 1:
            raise ParamsError("verify_block_length (l) must be >= 1")
        if not 0.0 <= self.code_error < 1.0:
            raise ParamsError(f"code_error must be in [0, 1), got {self.code_error}")
        if not 0.0 <= self.byzantine_fraction < 1.0:
            raise ParamsError(f"byzantine_fraction must be in [0, 1), got {self.byzantine_fraction}")
        object.__setattr__(self, "code_error", float(self.code_error))
        object.__setattr__(self, "byzantine_fraction", float(self.byzantine_fraction))

    @property
    def chunk_bits(self) -> int:
        return self.message_bits // self.chunk_count

    @property
    def chunk_space(self) -> int:
        return 2**self.chunk_bits

    @property
    def message_count(self) -> int:
        return 2**self.message_bits

    @property
    def chunk_length(self) -> int:
        return self.block_length // self.chunk_count

    @property
    def uses_per_attempt(self) -> int:
        return self.chunk_length + self.verifier_count * self.verify_block_length

    @property
    def nominal_rate(self) -> float:
        return self.message_bits / self.block_length

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ProtocolParams":
        return cls(**doc)


def _ceil_recip(eps: float) -> int:
    return math.ceil(1.0 / eps - 1e-9)


def paper_schedule(eps: float, beta: float, chunk_bits: int = 16, verify_block_length: int = 1) -> ProtocolParams:
    """Derive v, j, k, n from eps.

    v = ceil(1/eps), j = ceil(1/eps), k is the smallest count whose chain
    bound on a failed majority is at most eps, and n = v ceil(k l / eps) so
    that n >= k l v / eps with n/v integral.
    """
    if not 0.0 < eps < 0.5:
        raise ParamsError(f"schedule needs 0 < eps < 1/2, got {eps}")
    k = analysis.min_verifiers(beta, eps)
    j = analysis.min_bins(eps)
    v = _ceil_recip(eps)
    n = v * math.ceil(k * verify_block_length / eps - 1e-9)
    return ProtocolParams(
        message_bits=v * chunk_bits,
        chunk_count=v,
        block_length=n,
        bin_count=j,
        verifier_count=k,
        verify_block_length=verify_block_length,
        code_error=eps,
        byzantine_fraction=beta,
    )


def schedule_violations(params: ProtocolParams) -> list[str]:
    """Ways in which ``params`` miss the parameter schedule; empty when compliant."""
    eps, beta = params.code_error, params.byzantine_fraction
    v, n, k, l, j = (params.chunk_count, params.block_length, params.verifier_count,
                     params.verify_block_length, params.bin_count)
    out = []
    a = analysis.alpha_of(beta, eps)
    if a >= 0.5:
        return [f"alpha = 1-(1-beta)(1-eps) = {a:.6g} >= 1/2; verification cannot out-vote"]
    if eps <= 0.0:
        return ["code_error must be positive for the schedule"]
    if not (1.0 / eps - 1e-9 <= v <= 2.0 / eps + 1e-9):
        out.append(f"chunk_count={v} outside [1/eps, 2/eps] = [{1 / eps:.6g}, {2 / eps:.6g}]")
    if n < k * l * v / eps - 1e-9:
        out.append(f"block_length={n} < k l v / eps = {k * l * v / eps:.6g}")
    kmin = analysis.min_verifiers(beta, eps)
    if kmin is None or k < kmin:
        out.append(f"verifier_count={k} below the minimum {kmin}")
    if j < 1.0 / eps - 1e-9:
        out.append(f"bin_count={j} < 1/eps = {1 / eps:.6g}")
    return out


# ---------------------------------------------------------------------------
# messages and chunks


@dataclass(frozen=True)
class Message:
    value: int
    chunks: tuple[int, ...]


def split_message(value: int, params: ProtocolParams) -> Message:
    if not 0 <= value < params.message_count:
        raise ParamsError(f"message {value} outside [0, {params.message_count})")
    b, v = params.chunk_bits, params.chunk_count
    mask = (1 << b) - 1
    chunks = tuple((value >> (b * (v - 1 - i))) & mask for i in range(v))
    return Message(int(value), chunks)


def join_chunks(chunks, params: ProtocolParams) -> int:
    b = params.chunk_bits
    if len(chunks) != params.chunk_count:
        raise ParamsError(f"expected {params.chunk_count} chunks, got {len(chunks)}")
    value = 0
    for c in chunks:
        c = int(c)
        if not 0 <= c < params.chunk_space:
            raise ParamsError(f"chunk {c} outside [0, {params.chunk_space})")
        value = (value << b) | c
    return value


# ---------------------------------------------------------------------------
# dynamic random binning


@dataclass(frozen=True)
class BinAssignment:
    """A uniform random map from the chunk space to bins.

    ``key`` is the single draw that determines the map.  Small chunk spaces
    get an explicit ``table``; large ones hash (key, chunk) on demand.
    """

    chunk_space: int
    bin_count: int
    key: int
    table: np.ndarray | None = field(default=None, repr=False)

    def bin_of(self, chunk: int) -> int:
        if not 0 <= chunk < self.chunk_space:
            raise ParamsError(f"chunk {chunk} outside [0, {self.chunk_space})")
        if self.table is not None:
            return int(self.table[chunk])
        nbytes = max(1, (int(chunk).bit_length() + 7) // 8)
        h = hashlib.blake2b(int(chunk).to_bytes(nbytes, "little"), digest_size=16,
                            key=self.key.to_bytes(8, "little"))
        return int.from_bytes(h.digest(), "little") % self.bin_count


def fresh_binning(chunk_space: int, bin_count: int, rng: np.random.Generator) -> BinAssignment:
    if bin_count < 1:
        raise ParamsError("bin_count must be >= 1")
    key = int(rng.integers(2**63))
    table = None
    if chunk_space <= EXPLICIT_BINNING_LIMIT:
        sub = np.random.Generator(np.random.PCG64(key))
        table = sub.integers(bin_count, size=chunk_space)
        table.setflags(write=False)
    return BinAssignment(chunk_space, bin_count, key, table)


def verify_chunk(decoded_chunk: int, binning: BinAssignment, responses, k: int | None = None) -> bool:
    """Strict majority: more than half of the responses equal the decoded chunk's bin."""
    if k is not None and len(responses) != k:
        raise ParamsError(f"expected {k} responses, got {len(responses)}")
    target = binning.bin_of(decoded_chunk)
    return 2 * sum(1 for r in responses if r == target) > len(responses)


# ---------------------------------------------------------------------------
# sensors


@dataclass(frozen=True)
class Sensor:
    id: int
    byzantine: bool


class SensorPool:
    """Role oracle over sensor ids.

    With ``size=None`` the population is infinite: every draw is a fresh id
    that is Byzantine with probability beta.  A finite pool fixes each id's
    role up front and samples verifiers without replacement.
    """

    def __init__(self, beta: float, rng: np.random.Generator, size: int | None = None):
        self.beta = float(beta)
        self.rng = rng
        self.size = size
        self._roles: dict[int, bool] = {}
        self._next = 0
        if size is not None:
            if size < 1:
                raise ParamsError("finite pool needs size >= 1")
            flags = rng.random(size) < self.beta
            self._roles = {i: bool(f) for i, f in enumerate(flags)}

    def role(self, sensor_id: int) -> bool:
        return self._roles[sensor_id]

    def draw(self) -> Sensor:
        if self.size is None:
            sid = self._next
            self._next += 1
            self._roles[sid] = bool(self.rng.random() < self.beta)
        else:
            sid = int(self.rng.integers(self.size))
        return Sensor(sid, self._roles[sid])

    def draw_many(self, k: int) -> list[Sensor]:
        if self.size is None:
            return [self.draw() for _ in range(k)]
        if k > self.size:
            raise ParamsError(f"cannot draw {k} distinct sensors from a pool of {self.size}")
        ids = self.rng.choice(self.size, size=k, replace=False)
        return [Sensor(int(i), self._roles[int(i)]) for i in ids]


# ---------------------------------------------------------------------------
# transcripts


@dataclass
class VerifierRecord:
    sensor_id: int
    byzantine: bool
    intended_bin: int
    sent_bin: int | None
    decoded_bin: int


@dataclass
class AttemptRecord:
    index: int
    chunk_index: int
    transmitter_id: int
    transmitter_byzantine: bool
    intended_chunk: int
    sent_chunk: int | None
    decoded_chunk: int
    true_bin: int
    decoded_bin: int
    verifiers: list[VerifierRecord]
    matches: int
    accepted: bool
    events: dict[str, bool]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SessionTranscript:
    message: int
    decoded_message: int | None
    uses_per_attempt: int
    attempts: list[AttemptRecord] = field(default_factory=list)
    polls: list[tuple[int, int, bool, str]] = field(default_factory=list)
    aborted: bool = False
    cell_counts: np.ndarray = field(default_factory=lambda: np.zeros((len(CELL_NAMES), len(EVENT_NAMES)), dtype=np.int64))

    @property
    def channel_uses(self) -> int:
        return len(self.attempts) * self.uses_per_attempt

    @property
    def error(self) -> bool:
        return self.aborted or self.decoded_message != self.message

    @property
    def accepted_count(self) -> int:
        return sum(a.accepted for a in self.attempts)

    @property
    def event_counts(self) -> dict[str, int]:
        keys = ("A1", "A2", "A3", "B1", "B2", "C")
        return {k: sum(a.events[k] for a in self.attempts) for k in keys}

    def jsonl_lines(self, trial: int | None = None):
        import json

        for a in self.attempts:
            doc = a.to_dict()
            if trial is not None:
                doc = {"trial": trial, **doc}
            yield json.dumps(doc, sort_keys=True)


def _chunk_signal(action, code: ChannelCode, true_value: int, space: int):
    """Resolve a strategy action into (channel input, value claimed or None)."""
    if isinstance(action, Substitute):
        if not 0 <= action.value < space:
            raise StrategyError(f"substitute value {action.value} outside [0, {space})")
        return encode(code, action.value), int(action.value)
    if isinstance(action, Arbitrary):
        if len(action.signal) != code.block_length:
            raise StrategyError(f"arbitrary signal length {len(action.signal)} != {code.block_length}")
        return action.signal, None
    return encode(code, true_value), int(true_value)


def run_session(
    params: ProtocolParams,
    dmc: Dmc,
    g1: ChannelCode,
    g2: ChannelCode,
    message: int,
    pool: SensorPool,
    adversary: Strategy,
    rng: np.random.Generator,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> SessionTranscript:
    """Run one fusion session and return its full transcript.

    ``pool`` should share ``rng`` or own an independent stream; the session
    is deterministic given both.
    """
    space, j, k = params.chunk_space, params.bin_count, params.verifier_count
    if g1.message_count != space or g1.block_length != params.chunk_length:
        raise ParamsError(f"G1 must be a ({space}, {params.chunk_length}) code")
    if g2.message_count != j or g2.block_length != params.verify_block_length:
        raise ParamsError(f"G2 must be a ({j}, {params.verify_block_length}) code")
    g1.check_against(dmc)
    g2.check_against(dmc)

    msg = split_message(message, params)
    coord = adversary.start_session(message, msg.chunks, params, rng)
    tr = SessionTranscript(message=message, decoded_message=None, uses_per_attempt=params.uses_per_attempt)
    accepted: list[int] = []
    t = 0
    transmitter = pool.draw()

    while len(accepted) < params.chunk_count:
        if len(tr.attempts) >= max_attempts:
            tr.aborted = True
            return tr
        i = len(accepted)
        c = msg.chunks[i]
        base = dict(message=message, true_chunks=msg.chunks, chunk_index=i, transmitter_id=transmitter.id,
                    transmitter_byzantine=transmitter.byzantine, params=params, history=tr.attempts,
                    coordination=coord)

        # transmit
        if transmitter.byzantine:
            action = adversary.chunk_action(AdversaryView(sensor_id=transmitter.id, **base))
        else:
            action = HONEST
        signal, sent = _chunk_signal(action, g1, c, space)
        chat = decode(g1, dmc, transmit(dmc, signal, rng), rng)
        tr.polls.append((t, transmitter.id, transmitter.byzantine, "chunk"))
        t += params.chunk_length

        # verify
        binning = fresh_binning(space, j, rng)
        true_bin = binning.bin_of(c)
        target = binning.bin_of(chat)
        verifiers = []
        for sensor in pool.draw_many(k):
            if sensor.byzantine:
                vaction = adversary.verify_action(
                    AdversaryView(sensor_id=sensor.id, binning=binning, decoded_chunk=chat, **base)
                )
            else:
                vaction = HONEST
            vsignal, vsent = _chunk_signal(vaction, g2, true_bin, j)
            dbin = decode(g2, dmc, transmit(dmc, vsignal, rng), rng)
            verifiers.append(VerifierRecord(sensor.id, sensor.byzantine, true_bin, vsent, dbin))
            tr.polls.append((t, sensor.id, sensor.byzantine, "verify"))
            t += params.verify_block_length
        responses = [vr.decoded_bin for vr in verifiers]
        ok = verify_chunk(chat, binning, responses, k)
        matches = sum(r == target for r in responses)

        truthful = sent == c
        garbled = sent is None or chat != sent
        events = {
            "C": truthful,
            "A1": garbled,
            "A2": 2 * sum(r == true_bin for r in responses) <= k,
            "A3": chat != c and target == true_bin,
            "B1": not ok,
            "B2": ok and chat != c,
        }
        if truthful:
            cell = 1 if garbled else 0
        else:
            cell = 2 if chat != c else 3
        row = tr.cell_counts[cell]
        row[0] += 1
        row[1] += events["A2"]
        row[2] += events["A3"]
        row[3] += events["B1"]
        row[4] += events["B2"]
        row[5] += events["A1"]

        tr.attempts.append(AttemptRecord(
            index=len(tr.attempts), chunk_index=i, transmitter_id=transmitter.id,
            transmitter_byzantine=transmitter.byzantine, intended_chunk=c, sent_chunk=sent,
            decoded_chunk=chat, true_bin=true_bin, decoded_bin=target, verifiers=verifiers,
            matches=matches, accepted=ok, events=events,
        ))
        if ok:
            accepted.append(chat)
        else:
            transmitter = pool.draw()

    tr.decoded_message = join_chunks(accepted, params)
    return tr


def ideal_codes(params: ProtocolParams) -> tuple[ChannelCode, ChannelCode]:
    from .channel import ideal_code

    return (ideal_code(params.chunk_space, params.chunk_length, params.code_error),
            ideal_code(params.bin_count, params.verify_block_length, params.code_error))


__all__ = [
    "ProtocolParams", "ParamsError", "Message", "BinAssignment", "Sensor", "SensorPool",
    "SessionTranscript", "AttemptRecord", "VerifierRecord", "split_message", "join_chunks",
    "fresh_binning", "verify_chunk", "run_session", "paper_schedule", "schedule_violations",
    "ideal_codes", "DEFAULT_MAX_ATTEMPTS",
]
