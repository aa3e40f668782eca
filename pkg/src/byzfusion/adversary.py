"""Byzantine strategies.

Byzantine sensors see everything: the true message, every binning broadcast,
every received symbol and the fusion center's decoder.  A strategy answers two
questions, what to send when polled for a chunk and what to send when polled
for a bin index, given an :class:`AdversaryView`.

The verify-phase behaviour of policy-driven strategies is one of

``"honest"``   always send the true chunk's bin;
``"collude"``  back the fusion center's decoded chunk whenever it is not the
               true one, otherwise send the true bin (default);
``"obstruct"`` as ``collude``, and additionally vote a wrong bin against an
               honest transmitter's correctly decoded chunk.
"""

from __future__ import annotations

import itertools
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .analysis import LIE, MdpSolution
from .kernels import VERIFY_MODES


class StrategyError(ValueError):
    """Strategy constructed or used outside its preconditions."""


@dataclass(frozen=True)
class Honest:
    """Follow the protocol with the true message."""


HONEST = Honest()


@dataclass(frozen=True)
class Substitute:
    """Encode ``value`` (a chunk or a bin index) instead of the true one."""

    value: int


@dataclass(frozen=True)
class Arbitrary:
    """Send a raw channel-input sequence of the legal block length."""

    signal: Any


@dataclass(frozen=True)
class AdversaryView:
    message: int
    true_chunks: tuple[int, ...]
    chunk_index: int
    sensor_id: int
    transmitter_id: int
    transmitter_byzantine: bool
    params: Any
    history: tuple = ()
    binning: Any = None
    decoded_chunk: int | None = None
    coordination: Mapping = field(default_factory=dict)

    @property
    def true_chunk(self) -> int:
        return self.true_chunks[self.chunk_index]


class Strategy:
    """Per-level lie/truth policy plus a verify-phase mode."""

    name = "strategy"

    def __init__(self, verify: str = "collude", offset: int = 1):
        if verify not in VERIFY_MODES:
            raise StrategyError(f"verify mode must be one of {sorted(VERIFY_MODES)}, got {verify!r}")
        if offset == 0:
            raise StrategyError("substitution offset must be nonzero")
        self.verify = verify
        self.offset = int(offset)

    def lies_at(self, level: int) -> bool:
        return False

    def start_session(self, message: int, true_chunks, params, rng) -> dict:
        if self.offset % params.chunk_space == 0:
            raise StrategyError(f"offset {self.offset} is 0 mod chunk space {params.chunk_space}")
        return {}

    def substitute_chunk(self, view: AdversaryView) -> int:
        return (view.true_chunk + self.offset) % view.params.chunk_space

    def chunk_action(self, view: AdversaryView):
        if self.lies_at(view.chunk_index):
            return Substitute(self.substitute_chunk(view))
        return HONEST

    def verify_action(self, view: AdversaryView):
        if self.verify == "honest" or view.decoded_chunk is None:
            return HONEST
        if view.decoded_chunk != view.true_chunk:
            return Substitute(view.binning.bin_of(view.decoded_chunk))
        if self.verify == "obstruct" and not view.transmitter_byzantine:
            return Substitute((view.binning.bin_of(view.true_chunk) + 1) % view.binning.bin_count)
        return HONEST

    def lie_levels(self, v: int) -> np.ndarray:
        return np.array([self.lies_at(i) for i in range(v)], dtype=np.int8)

    def kernel_args(self, params) -> dict:
        if self.offset % params.chunk_space == 0:
            raise StrategyError(f"offset {self.offset} is 0 mod chunk space {params.chunk_space}")
        return {
            "half_split": False,
            "lie_levels": self.lie_levels(params.chunk_count),
            "offset": self.offset,
            "verify_mode": VERIFY_MODES[self.verify],
        }

    def describe(self) -> dict:
        return {"strategy": self.name, "verify": self.verify, "offset": self.offset}


class HonestMimic(Strategy):
    name = "honest_mimic"

    def __init__(self):
        super().__init__(verify="honest")

    def verify_action(self, view):
        return HONEST

    def describe(self) -> dict:
        return {"strategy": self.name}


class AlwaysLie(Strategy):
    name = "always_lie"

    def lies_at(self, level: int) -> bool:
        return True


class MdpOptimal(Strategy):
    """Lie at level i exactly when the error-maximising MDP policy says so."""

    name = "mdp_optimal"

    def __init__(self, solution: MdpSolution, verify: str = "collude", offset: int = 1):
        super().__init__(verify, offset)
        self.solution = solution

    def check(self, params) -> None:
        m = self.solution.params
        if m.v != params.chunk_count or abs(m.beta - params.byzantine_fraction) > 1e-12:
            raise StrategyError(
                f"MDP solved for v={m.v}, beta={m.beta} but session has "
                f"v={params.chunk_count}, beta={params.byzantine_fraction}"
            )

    def lies_at(self, level: int) -> bool:
        return bool(self.solution.decision[level] == LIE)

    def start_session(self, message, true_chunks, params, rng) -> dict:
        self.check(params)
        return super().start_session(message, true_chunks, params, rng)

    def kernel_args(self, params) -> dict:
        self.check(params)
        return super().kernel_args(params)


def honest_mimic() -> HonestMimic:
    return HonestMimic()


def always_lie(offset: int = 1, verify: str = "collude") -> AlwaysLie:
    return AlwaysLie(verify=verify, offset=offset)


def mdp_optimal(solution: MdpSolution, verify: str = "collude", offset: int = 1) -> MdpOptimal:
    return MdpOptimal(solution, verify=verify, offset=offset)


# ---------------------------------------------------------------------------
# converse attack


def default_false_chunks(true_chunks, chunk_space: int, rng: np.random.Generator) -> np.ndarray:
    """Perturb one uniformly chosen chunk to a uniformly chosen other value.

    Differing in a single chunk keeps every decodable outcome inside
    {W, W'}, so decode success is not diluted by hybrid messages.
    """
    out = np.array(true_chunks, dtype=object if chunk_space > 2**62 else np.int64)
    pos = int(rng.integers(len(out)))
    out[pos] = (int(out[pos]) + 1 + int(rng.integers(chunk_space - 1))) % chunk_space
    return out


class HalfSplit(Strategy):
    """Half the population acts honestly with W, the other half honestly with W'.

    A Byzantine id joins the false group with probability 1/(2 beta), so the
    false group is exactly half of all sensors and the remaining
    beta - 1/2 mimic honest sensors.
    """

    name = "half_split"

    def __init__(self, false_message: int | None = None):
        super().__init__(verify="honest")
        self.false_message = false_message

    @staticmethod
    def split(beta: float) -> tuple[float, float]:
        """(fraction mimicking the truth, fraction pushing the false message)."""
        if beta < 0.5:
            raise StrategyError(f"half_split needs beta >= 1/2, got {beta}")
        return beta - 0.5, 0.5

    def start_session(self, message, true_chunks, params, rng) -> dict:
        self.split(params.byzantine_fraction)
        if self.false_message is None:
            false_chunks = default_false_chunks(true_chunks, params.chunk_space, rng)
        else:
            if self.false_message == message:
                raise StrategyError("false message equals the true message")
            from .protocol import split_message

            false_chunks = split_message(self.false_message, params).chunks
        return {
            "false_chunks": tuple(int(c) for c in false_chunks),
            "groups": {},
            "rng": np.random.Generator(np.random.PCG64(rng.integers(2**63))),
        }

    def in_false_group(self, view: AdversaryView) -> bool:
        groups = view.coordination["groups"]
        sid = view.sensor_id
        if sid not in groups:
            groups[sid] = bool(view.coordination["rng"].random() < 0.5 / view.params.byzantine_fraction)
        return groups[sid]

    def chunk_action(self, view):
        if self.in_false_group(view):
            return Substitute(view.coordination["false_chunks"][view.chunk_index])
        return HONEST

    def verify_action(self, view):
        if self.in_false_group(view):
            return Substitute(view.binning.bin_of(view.coordination["false_chunks"][view.chunk_index]))
        return HONEST

    def kernel_args(self, params) -> dict:
        self.split(params.byzantine_fraction)
        return {
            "half_split": True,
            "lie_levels": np.zeros(params.chunk_count, dtype=np.int8),
            "offset": 1,
            "verify_mode": VERIFY_MODES["honest"],
        }

    def describe(self) -> dict:
        return {"strategy": self.name, "false_message": self.false_message}


def half_split(false_message: int | None = None) -> HalfSplit:
    return HalfSplit(false_message)


# ---------------------------------------------------------------------------
# exact enumeration of the converse on the smallest instance


def half_split_micro_attempts(eps: float, j: int = 2) -> dict[tuple, float]:
    """Exact per-attempt distribution for v=1, M=2, k=1 under the half-split attack.

    Keys are ``(W, tx_group, decoded_chunk, bins, verifier_group,
    decoded_bin, accepted)`` with groups ``"T"`` (honest or truth-mimic,
    total mass 1/2) and ``"F"`` (false group, mass 1/2); ``W' = 1 - W``.
    """
    dist: dict[tuple, float] = {}
    for w, gt, err1, b0, b1, gv in itertools.product((0, 1), "TF", (0, 1), range(j), range(j), "TF"):
        sent = w if gt == "T" else 1 - w
        decoded = sent if err1 == 0 else 1 - sent
        p = 0.5 * 0.5 * (eps if err1 else 1 - eps) / j**2 * 0.5
        bins = (b0, b1)
        vbin = bins[w if gv == "T" else 1 - w]
        for dbin in range(j):
            if j == 1:
                pb = 1.0
            elif dbin == vbin:
                pb = 1 - eps
            else:
                pb = eps / (j - 1)
            if pb == 0.0:
                continue
            key = (w, gt, decoded, bins, gv, dbin, dbin == bins[decoded])
            dist[key] = dist.get(key, 0.0) + p * pb
    return dist


def swap_half_split(key: tuple) -> tuple:
    """Relabel W <-> W' and the truth group <-> the false group."""
    w, gt, decoded, bins, gv, dbin, acc = key
    flip = {"T": "F", "F": "T"}
    return (1 - w, flip[gt], decoded, bins, flip[gv], dbin, acc)


def half_split_micro_sessions(eps: float, j: int = 2, depth: int = 3) -> dict[tuple, float]:
    """Probabilities of complete sessions with at most ``depth`` attempts.

    A session is ``(W, attempt_1, ..., attempt_m)`` where all but the last
    attempt were declined and the last accepted; attempts omit W.
    """
    att = half_split_micro_attempts(eps, j)
    by_w = {w: {k[1:]: p / 0.5 for k, p in att.items() if k[0] == w} for w in (0, 1)}
    out: dict[tuple, float] = {}
    for w in (0, 1):
        declined = [(k, p) for k, p in by_w[w].items() if not k[-1]]
        accepted = [(k, p) for k, p in by_w[w].items() if k[-1]]
        for m in range(depth):
            for prefix in itertools.product(declined, repeat=m):
                pre_p = np.prod([p for _, p in prefix]) if prefix else 1.0
                for last, pl in accepted:
                    out[(w,) + tuple(k for k, _ in prefix) + (last,)] = 0.5 * pre_p * pl
    return out


def swap_half_split_session(session: tuple) -> tuple:
    w = session[0]
    flip = {"T": "F", "F": "T"}
    attempts = tuple((flip[a[0]], a[1], a[2], flip[a[3]], a[4], a[5]) for a in session[1:])
    return (1 - w,) + attempts


def half_split_micro_success(eps: float, j: int = 2) -> float:
    """Exact P(decoded == W) for the micro-instance (declines restart from scratch)."""
    att = half_split_micro_attempts(eps, j)
    acc = sum(p for k, p in att.items() if k[-1])
    right = sum(p for k, p in att.items() if k[-1] and k[2] == k[0])
    return right / acc
