"""Discrete memoryless channels, block codes over them, and capacity.

Two code modes are provided.  ``ideal`` codes carry the message index
out-of-band and inject a decoding error with a declared probability; they
realise an abstract (M, n, eps) code exactly.  ``random_codebook`` codes draw
codewords i.i.d. from an input distribution and decode by maximum likelihood,
which is only practical for small M and n.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

ROW_TOL = 1e-12

# relative slack under which two log-likelihoods count as a tie
_TIE_RTOL = 1e-9


class ChannelError(ValueError):
    """Invalid channel, code or symbol sequence."""


@dataclass(frozen=True)
class Dmc:
    """Channel transition matrix ``transition[x, y] = q(y|x)``."""

    transition: np.ndarray

    def __post_init__(self):
        q = np.array(self.transition, dtype=float)
        if q.ndim != 2 or q.shape[0] < 1 or q.shape[1] < 1:
            raise ChannelError(f"transition must be a non-empty matrix, got shape {q.shape}")
        if np.any(~np.isfinite(q)) or np.any(q < 0.0) or np.any(q > 1.0):
            raise ChannelError("transition entries must lie in [0, 1]")
        dev = np.abs(q.sum(axis=1) - 1.0)
        if np.any(dev > ROW_TOL):
            bad = int(np.argmax(dev))
            raise ChannelError(f"row {bad} sums to {q[bad].sum()!r}, not 1")
        q.setflags(write=False)
        object.__setattr__(self, "transition", q)

    @property
    def input_alphabet_size(self) -> int:
        return self.transition.shape[0]

    @property
    def output_alphabet_size(self) -> int:
        return self.transition.shape[1]

    def to_json(self) -> dict:
        return {
            "inputs": self.input_alphabet_size,
            "outputs": self.output_alphabet_size,
            "rows": self.transition.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Dmc":
        try:
            rows = doc["rows"]
            ni, no = int(doc["inputs"]), int(doc["outputs"])
        except (KeyError, TypeError) as exc:
            raise ChannelError(f"DMC document needs 'inputs', 'outputs', 'rows': {exc}") from None
        dmc = cls(np.asarray(rows, dtype=float))
        if dmc.transition.shape != (ni, no):
            raise ChannelError(
                f"declared shape ({ni}, {no}) does not match rows {dmc.transition.shape}"
            )
        return dmc

    @classmethod
    def load(cls, path: str | Path) -> "Dmc":
        return cls.from_json(json.loads(Path(path).read_text()))


def bsc(crossover: float) -> Dmc:
    """Binary symmetric channel."""
    p = float(crossover)
    return Dmc(np.array([[1.0 - p, p], [p, 1.0 - p]]))


def identity_channel(size: int) -> Dmc:
    return Dmc(np.eye(size))


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * np.log2(p) - (1.0 - p) * np.log2(1.0 - p))


# ---------------------------------------------------------------------------
# capacity


@dataclass(frozen=True)
class CapacityResult:
    capacity_bits: float
    optimal_input: np.ndarray
    iterations: int
    lower_trace: tuple[float, ...] = field(repr=False, default=())
    bracket: float = 0.0


def _divergences(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """D(q(.|x) || sum_x p(x) q(.|x)) in bits, one value per input."""
    out = p @ q
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(q > 0.0, q / out[None, :], 1.0)
        terms = np.where(q > 0.0, q * np.log2(ratio), 0.0)
    return terms.sum(axis=1)


def capacity(dmc: Dmc, tolerance: float = 1e-9, max_iter: int = 100_000) -> CapacityResult:
    """Blahut-Arimoto capacity in bits.

    Each iteration brackets the capacity between ``log2 sum_x p(x) 2^{D_x}``
    and ``max_x D_x``; the loop stops once the bracket is narrower than
    ``tolerance`` and the midpoint-free lower value is returned.
    """
    if not tolerance > 0:
        raise ChannelError("tolerance must be positive")
    q = dmc.transition
    nx = q.shape[0]
    p = np.full(nx, 1.0 / nx)
    trace = []
    for it in range(1, max_iter + 1):
        d = _divergences(q, p)
        w = p * np.exp2(d - d.max())
        lower = float(d.max() + np.log2(w.sum()))
        upper = float(d.max())
        trace.append(lower)
        if upper - lower < tolerance:
            break
        p = w / w.sum()
    else:
        raise ChannelError(f"Blahut-Arimoto did not reach tolerance {tolerance} in {max_iter} iterations")
    return CapacityResult(
        capacity_bits=max(lower, 0.0),
        optimal_input=p,
        iterations=it,
        lower_trace=tuple(trace),
        bracket=upper - lower,
    )


# ---------------------------------------------------------------------------
# codes


@dataclass(frozen=True)
class SentinelSequence(Sequence):
    """Length-n stand-in for an ideal-code codeword; every position holds the message index."""

    symbol: int
    length: int

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, item):
        if isinstance(item, slice):
            return [self.symbol] * len(range(*item.indices(self.length)))
        if not -self.length <= item < self.length:
            raise IndexError(item)
        return self.symbol


@dataclass
class ChannelCode:
    """An (M, n, eps) code.

    ``mode`` is ``"ideal"`` (``error_prob`` is the declared eps) or
    ``"random_codebook"`` (``codewords`` is an M x n array of input symbols).
    ``certified_error_prob`` is the declared eps for ideal codes and is
    overwritten by :func:`certify_code`.
    """

    message_count: int
    block_length: int
    mode: str
    error_prob: float = 0.0
    codewords: np.ndarray | None = None
    certified_error_prob: float = 0.0

    def __post_init__(self):
        if self.message_count < 1 or self.block_length < 1:
            raise ChannelError("message_count and block_length must be positive")
        if self.mode == "ideal":
            if not 0.0 <= self.error_prob < 1.0:
                raise ChannelError(f"ideal error_prob must be in [0, 1), got {self.error_prob}")
            self.certified_error_prob = float(self.error_prob)
        elif self.mode == "random_codebook":
            cw = np.asarray(self.codewords)
            if cw.shape != (self.message_count, self.block_length):
                raise ChannelError(
                    f"codebook shape {cw.shape} != ({self.message_count}, {self.block_length})"
                )
            self.codewords = cw.astype(np.int64)
        else:
            raise ChannelError(f"unknown code mode {self.mode!r}")
        if not 0.0 <= self.certified_error_prob < 1.0:
            raise ChannelError("certified_error_prob must be in [0, 1)")

    def check_against(self, dmc: Dmc) -> None:
        if self.mode == "random_codebook":
            cw = self.codewords
            if cw.min() < 0 or cw.max() >= dmc.input_alphabet_size:
                raise ChannelError("codeword symbols outside the channel input alphabet")

    def to_json(self) -> dict:
        doc: dict[str, Any] = {
            "mode": self.mode,
            "message_count": self.message_count,
            "block_length": self.block_length,
            "certified_error_prob": self.certified_error_prob,
        }
        if self.mode == "ideal":
            doc["error_prob"] = self.error_prob
        else:
            doc["codewords"] = self.codewords.tolist()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ChannelCode":
        code = cls(
            message_count=int(doc["message_count"]),
            block_length=int(doc["block_length"]),
            mode=doc["mode"],
            error_prob=float(doc.get("error_prob", 0.0)),
            codewords=None if doc.get("codewords") is None else np.asarray(doc["codewords"]),
        )
        code.certified_error_prob = float(doc.get("certified_error_prob", code.certified_error_prob))
        return code


def ideal_code(message_count: int, block_length: int, error_prob: float) -> ChannelCode:
    return ChannelCode(message_count, block_length, "ideal", error_prob=error_prob)


def random_codebook(
    dmc: Dmc,
    message_count: int,
    block_length: int,
    rng: np.random.Generator,
    input_dist: np.ndarray | None = None,
    distinct: bool = True,
) -> ChannelCode:
    """Draw an M x n codebook i.i.d. from ``input_dist``.

    The default input distribution is the capacity-achieving one.  With
    ``distinct`` set, repeated rows are redrawn so that the code is
    injective whenever the alphabet permits it.
    """
    if input_dist is None:
        input_dist = capacity(dmc).optimal_input
    p = np.asarray(input_dist, dtype=float)
    nx = dmc.input_alphabet_size
    cw = rng.choice(nx, size=(message_count, block_length), p=p)
    if distinct and nx**block_length >= message_count:
        for _ in range(10_000):
            _, first = np.unique(cw, axis=0, return_index=True)
            dup = np.setdiff1d(np.arange(message_count), first)
            if dup.size == 0:
                break
            cw[dup] = rng.choice(nx, size=(dup.size, block_length), p=p)
        else:
            raise ChannelError("could not draw a codebook with distinct codewords")
    return ChannelCode(message_count, block_length, "random_codebook", codewords=cw)


def encode(code: ChannelCode, message_index: int):
    if not 0 <= message_index < code.message_count:
        raise ChannelError(f"message index {message_index} outside [0, {code.message_count})")
    if code.mode == "ideal":
        return SentinelSequence(int(message_index), code.block_length)
    return code.codewords[message_index].copy()


def transmit(dmc: Dmc, inputs, rng: np.random.Generator):
    """Pass a symbol sequence through the channel.

    Sentinel sequences from ideal codes are returned unchanged: the ideal
    code subsumes the channel, and its errors are applied by :func:`decode`.
    """
    if isinstance(inputs, SentinelSequence):
        return inputs
    x = np.asarray(inputs, dtype=np.int64)
    if x.size and (x.min() < 0 or x.max() >= dmc.input_alphabet_size):
        raise ChannelError("input symbol outside the channel alphabet")
    cdf = np.cumsum(dmc.transition, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(x.shape)
    return (u[..., None] >= cdf[x]).sum(axis=-1).astype(np.int64)


def _log_channel(dmc: Dmc) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(dmc.transition)


def _argmax_lowest(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax where near-equal maxima resolve to the lowest index."""
    best = scores.max(axis=-1, keepdims=True)
    slack = _TIE_RTOL * np.maximum(1.0, np.abs(np.where(np.isfinite(best), best, 0.0)))
    near = scores >= best - slack
    return np.argmax(near, axis=-1)


def ml_decode_batch(code: ChannelCode, dmc: Dmc, received: np.ndarray, batch: int = 4096) -> np.ndarray:
    """Maximum-likelihood decode each row of ``received`` (T x n)."""
    rec = np.atleast_2d(np.asarray(received, dtype=np.int64))
    if rec.shape[1] != code.block_length:
        raise ChannelError(f"received length {rec.shape[1]} != block length {code.block_length}")
    logq = _log_channel(dmc)
    cw = code.codewords
    out = np.empty(rec.shape[0], dtype=np.int64)
    step = max(1, batch // max(1, code.message_count))
    for s in range(0, rec.shape[0], step):
        r = rec[s : s + step]
        ll = logq[cw[None, :, :], r[:, None, :]].sum(axis=-1)
        out[s : s + step] = _argmax_lowest(ll)
    return out


def decode(code: ChannelCode, dmc: Dmc, received, rng: np.random.Generator | None = None) -> int:
    if len(received) != code.block_length:
        raise ChannelError(f"received length {len(received)} != block length {code.block_length}")
    if code.mode == "random_codebook":
        return int(ml_decode_batch(code, dmc, np.asarray(received)[None, :])[0])
    if rng is None:
        raise ChannelError("ideal-mode decoding needs the session random source")
    if not isinstance(received, SentinelSequence) or not 0 <= received.symbol < code.message_count:
        # an unstructured signal carries no index
        return int(rng.integers(code.message_count))
    idx = received.symbol
    if code.message_count > 1 and rng.random() < code.error_prob:
        w = int(rng.integers(code.message_count - 1))
        return w if w < idx else w + 1
    return idx


def certify_code(code: ChannelCode, dmc: Dmc, trials: int, rng: np.random.Generator) -> float:
    """Monte Carlo block-error estimate over uniform messages; stored on the code."""
    if trials < 1:
        raise ChannelError("trials must be >= 1")
    msgs = rng.integers(code.message_count, size=trials)
    if code.mode == "ideal":
        wrong = rng.random(trials) < code.error_prob if code.message_count > 1 else np.zeros(trials, bool)
        est = float(wrong.mean())
    else:
        code.check_against(dmc)
        rec = transmit(dmc, code.codewords[msgs], rng)
        est = float((ml_decode_batch(code, dmc, rec) != msgs).mean())
    code.certified_error_prob = min(est, np.nextafter(1.0, 0.0))
    return est
