"""Error and length Markov decision processes of the transmit-then-verify scheme.

States ``i`` / ``i'`` mean "i chunks accepted, current transmitter honest /
Byzantine".  Only a Byzantine transmitter decides anything: lie (send a
false chunk) or tell the truth.  Per-attempt transition probabilities are

    p1 = P(decline | true chunk sent)
    p2 = P(false chunk accepted | false chunk sent)
    p3 = P(false chunk accepted | true chunk sent)

Each level's equations are affine in the two unknowns of that level once the
next level is known, so both MDPs are solved exactly by a backward sweep of
2x2 linear solves, one per Byzantine choice, keeping the better one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

LIE, TRUTH = 1, 0

_SINGULAR = 1e-14


class MdpError(ValueError):
    """Parameters for which the MDP has no finite solution."""


class RegimeError(ValueError):
    """Byzantine fraction too large for the verification bounds (alpha >= 1/2)."""


@dataclass(frozen=True)
class MdpParams:
    p1: float
    p2: float
    p3: float
    beta: float
    v: int

    def __post_init__(self):
        for name in ("p1", "p2", "p3"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name}={val} outside [0, 1]")
        if self.p1 + self.p3 > 1.0 + 1e-12:
            raise ValueError(f"p1 + p3 = {self.p1 + self.p3} exceeds 1")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta={self.beta} outside [0, 1)")
        if self.v < 1:
            raise ValueError("v must be >= 1")


@dataclass(frozen=True)
class MdpSolution:
    params: MdpParams
    e: np.ndarray
    e_prime: np.ndarray
    decision: np.ndarray
    q: np.ndarray
    q_prime: np.ndarray
    length_decision: np.ndarray
    residual: float

    @property
    def total_error(self) -> float:
        b = self.params.beta
        return float((1 - b) * self.e[0] + b * self.e_prime[0])

    @property
    def expected_chunk_attempts(self) -> float:
        b = self.params.beta
        return float((1 - b) * self.q[0] + b * self.q_prime[0])

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "e": self.e.tolist(),
            "e_prime": self.e_prime.tolist(),
            "q": self.q.tolist(),
            "q_prime": self.q_prime.tolist(),
            "decision": ["lie" if d == LIE else "truth" for d in self.decision],
            "length_decision": ["lie" if d == LIE else "truth" for d in self.length_decision],
            "total_error": self.total_error,
            "expected_chunk_attempts": self.expected_chunk_attempts,
        }


# ---------------------------------------------------------------------------
# per-level linear systems
#
# Each branch at level i is  A [x_i, x_i']^T = b  with the next level's
# values folded into b.


def _error_system(m: MdpParams, branch: int, e_next: float, ep_next: float):
    p1, p2, p3, b = m.p1, m.p2, m.p3, m.beta
    stay = 1.0 - p1 - p3
    row0 = ([1.0 - p1 * (1 - b), -p1 * b], p3 + stay * e_next)
    if branch == LIE:
        row1 = ([-(1 - p2) * (1 - b), 1.0 - (1 - p2) * b], p2)
    else:
        row1 = ([-p1 * (1 - b), 1.0 - p1 * b], p3 + stay * ep_next)
    return np.array([row0[0], row1[0]]), np.array([row0[1], row1[1]])


def _length_system(m: MdpParams, branch: int, q_next: float, qp_next: float):
    p1, p2, b = m.p1, m.p2, m.beta
    row0 = ([1.0 - p1 * (1 - b), -p1 * b], 1.0 + (1 - p1) * q_next)
    if branch == LIE:
        row1 = ([-(1 - p2) * (1 - b), 1.0 - (1 - p2) * b], 1.0 + p2 * qp_next)
    else:
        row1 = ([-p1 * (1 - b), 1.0 - p1 * b], 1.0 + (1 - p1) * qp_next)
    return np.array([row0[0], row1[0]]), np.array([row0[1], row1[1]])


def _solve_level(a: np.ndarray, rhs: np.ndarray, tol: float, max_iter: int, what: str):
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if abs(det) > _SINGULAR:
        return np.linalg.solve(a, rhs)
    # x = (I - A) x + rhs, value iteration from zero gives the least fixed point
    t = np.eye(2) - a
    x = np.zeros(2)
    last = math.inf
    for it in range(max_iter):
        nxt = t @ x + rhs
        step = float(np.max(np.abs(nxt - x)))
        if step < tol:
            return nxt
        x = nxt
        if it % 1000 == 999:
            # steps that stop shrinking mean the values grow without bound
            if step >= 0.999 * last:
                break
            last = step
    raise MdpError(f"{what}: level equations are not contractive (no progress is possible)")


def _sweep(m: MdpParams, system, tol: float, max_iter: int, what: str, policy=None):
    v = m.v
    x = np.zeros(v + 1)
    xp = np.zeros(v + 1)
    dec = np.zeros(v, dtype=np.int8)
    resid = 0.0
    for i in range(v - 1, -1, -1):
        if policy is not None:
            branches = (int(policy[i]),)
        else:
            branches = (LIE, TRUTH)
        best = None
        for br in branches:
            a, rhs = system(m, br, x[i + 1], xp[i + 1])
            sol = _solve_level(a, rhs, tol, max_iter, what)
            resid = max(resid, float(np.max(np.abs(a @ sol - rhs))))
            # ties resolve toward lying: LIE is evaluated first and kept unless beaten
            if best is None or sol[1] > best[1][1] + max(tol, 1e-12) * max(1.0, abs(best[1][1])):
                best = (br, sol)
        dec[i] = best[0]
        x[i], xp[i] = best[1]
    return x, xp, dec, resid


def solve_error_mdp(m: MdpParams, tol: float = 1e-12, max_iter: int = 1_000_000):
    """Error-maximising MDP.  Returns ``(e, e_prime, decision, residual)``."""
    e, ep, dec, resid = _sweep(m, _error_system, tol, max_iter, "error MDP")
    return np.clip(e, 0.0, 1.0), np.clip(ep, 0.0, 1.0), dec, resid


def solve_length_mdp(m: MdpParams, tol: float = 1e-12, max_iter: int = 1_000_000):
    """Length-maximising MDP.  Returns ``(q, q_prime, decision, residual)``."""
    return _sweep(m, _length_system, tol, max_iter, "length MDP")


def evaluate_error_policy(m: MdpParams, policy) -> tuple[np.ndarray, np.ndarray]:
    """Error probabilities when Byzantine transmitters follow a fixed per-level policy."""
    e, ep, _, _ = _sweep(m, _error_system, 1e-12, 1_000_000, "error MDP", policy=np.asarray(policy))
    return e, ep


def evaluate_length_policy(m: MdpParams, policy) -> tuple[np.ndarray, np.ndarray]:
    q, qp, _, _ = _sweep(m, _length_system, 1e-12, 1_000_000, "length MDP", policy=np.asarray(policy))
    return q, qp


def solve_mdp(m: MdpParams, tol: float = 1e-12) -> MdpSolution:
    e, ep, dec, r1 = solve_error_mdp(m, tol)
    q, qp, ldec, r2 = solve_length_mdp(m, tol)
    return MdpSolution(m, e, ep, dec, q, qp, ldec, max(r1, r2))


# ---------------------------------------------------------------------------
# closed-form comparison sequence


@dataclass(frozen=True)
class FBound:
    f: np.ndarray
    f_prime: np.ndarray
    pe_bound: float


def closed_form_f(m: MdpParams) -> FBound:
    """Closed-form upper sequence f_i for e_i and the induced P_e bound.

    ``f_i = (p3/(1-p1) + p1 p2 beta / ((1-p1)(1-beta))) (v - i)`` and
    ``f_i' = p2/(1-beta) + f_i`` for i < v, zero at i = v.
    """
    if m.p1 >= 1.0:
        raise MdpError("closed form needs p1 < 1")
    p1, p2, p3, b, v = m.p1, m.p2, m.p3, m.beta, m.v
    slope = p3 / (1 - p1) + p1 * p2 * b / ((1 - p1) * (1 - b))
    f = slope * (v - np.arange(v + 1, dtype=float))
    fp = f + p2 / (1 - b)
    fp[v] = 0.0
    return FBound(f, fp, float(f[0] + p2 * b / (1 - b)))


def f_branches(m: MdpParams) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Solve the f recurrences numerically, returning both branch values per level.

    Returns ``(f, f_prime, branch_a, branch_b)`` where ``branch_a[i]`` and
    ``branch_b[i]`` are the two candidates in the max defining f_i', each
    evaluated at the solved (f_i, f_i').
    """
    p1, p2, p3, b, v = m.p1, m.p2, m.p3, m.beta, m.v
    stay = 1.0 - p1 - p3
    f = np.zeros(v + 1)
    fp = np.zeros(v + 1)
    ca = np.zeros(v)
    cb = np.zeros(v)
    for i in range(v - 1, -1, -1):
        row0 = ([1.0 - p1 * (1 - b), -p1 * b], p3 + stay * f[i + 1])
        sys_a = (np.array([row0[0], [-(1 - b), 1.0 - b]]), np.array([row0[1], p2]))
        sys_b = (np.array([row0[0], [-p1 * (1 - b), 1.0 - p1 * b]]), np.array([row0[1], p3 + stay * fp[i + 1]]))
        sols = [np.linalg.solve(*s) for s in (sys_a, sys_b)]
        fi, fpi = max(sols, key=lambda s: s[1])
        f[i], fp[i] = fi, fpi
        ca[i] = p2 + b * fpi + (1 - b) * fi
        cb[i] = p3 + stay * fp[i + 1] + p1 * b * fpi + p1 * (1 - b) * fi
    return f, fp, ca, cb


# ---------------------------------------------------------------------------
# verification-event bounds and the parameter schedule


def alpha_of(beta: float, eps: float) -> float:
    """Upper bound on the probability that one polled bin index is wrong."""
    return 1.0 - (1.0 - beta) * (1.0 - eps)


def a2_chain_bound(alpha: float, k: int) -> float:
    """Closed-form majority-failure bound ``(1-a)/(1-2a) (4 a (1-a))^{k/2}``."""
    if alpha >= 0.5:
        raise RegimeError(f"alpha={alpha} >= 1/2")
    if alpha == 0.0:
        return 0.0
    return min(1.0, (1 - alpha) / (1 - 2 * alpha) * (4 * alpha * (1 - alpha)) ** (k / 2))


def a2_exact_tail(alpha: float, k: int) -> float:
    """P(Binomial(k, alpha) >= ceil(k/2))."""
    lo = math.ceil(k / 2)
    return float(stats.binom.sf(lo - 1, k, alpha))


def majority_pass_prob(k: int, p: float) -> float:
    """P(Binomial(k, p) > k/2): strict-majority acceptance."""
    return float(stats.binom.sf(k // 2, k, p))


def min_verifiers(beta: float, eps: float) -> int | None:
    """Smallest k with the chain bound on P(A2) at most eps; None if unattainable."""
    a = alpha_of(beta, eps)
    if a >= 0.5:
        raise RegimeError(f"alpha={a} >= 1/2 (beta={beta}, eps={eps})")
    if a == 0.0:
        return 1
    if eps <= 0.0:
        return None
    k = math.ceil(2 * math.log((1 - 2 * a) / (1 - a) * eps) / math.log(4 * a * (1 - a)))
    k = max(k, 1)
    # guard against floating error at the ceiling
    while a2_chain_bound(a, k) > eps:
        k += 1
    return k


def min_bins(eps: float) -> int | None:
    if eps <= 0.0:
        return None
    return max(2, math.ceil(1.0 / eps - 1e-12))


@dataclass(frozen=True)
class EventBounds:
    alpha: float
    a1: float
    a2: float
    a2_chain: float
    a2_exact: float
    a3: float
    p1: float
    p2: float
    p3: float
    k_min: int | None
    j_min: int | None
    tail: str

    def mdp_params(self, beta: float, v: int) -> MdpParams:
        return MdpParams(self.p1, self.p2, self.p3, beta, v)


def lemma1_bounds(beta: float, eps: float, j: int, k: int, tail: str = "chain") -> EventBounds:
    """Bounds on the basic verification events and the induced p1, p2, p3.

    ``tail`` picks the P(A2) bound used downstream: ``"chain"`` for the
    closed-form bound the schedule is built from, ``"exact"`` for the
    binomial tail.
    """
    a = alpha_of(beta, eps)
    if a >= 0.5:
        raise RegimeError(f"alpha={a} >= 1/2 (beta={beta}, eps={eps}); verification cannot out-vote")
    chain = a2_chain_bound(a, k)
    exact = a2_exact_tail(a, k)
    if tail == "chain":
        a2 = chain
    elif tail == "exact":
        a2 = exact
    else:
        raise ValueError(f"tail must be 'chain' or 'exact', got {tail!r}")
    a1 = eps
    a3 = 1.0 / j
    p1 = min(1.0, a1 + a2)
    p2 = min(1.0, a2 + a3)
    p3 = min(1.0 - p1, a1 * (a2 + a3))
    return EventBounds(a, a1, a2, chain, exact, a3, p1, p2, p3, min_verifiers(beta, eps), min_bins(eps), tail)


# ---------------------------------------------------------------------------
# channel-use bounds


def expected_attempts_bound(p1: float, beta: float, v: int) -> float:
    if p1 >= 1.0 or beta >= 1.0:
        raise MdpError("attempt bound needs p1 < 1 and beta < 1")
    return (1 + p1 / ((1 - p1) * (1 - beta))) * v + beta / (1 - beta)


@dataclass(frozen=True)
class LengthBound:
    attempts: float
    channel_uses: float
    rate: float | None


def length_bound(p1: float, beta: float, n: int, v: int, k: int, l: int, message_bits: int | None = None) -> LengthBound:
    """Upper bound on E(N) and the implied lower bound on the rate."""
    ev = expected_attempts_bound(p1, beta, v)
    en = ev * (n / v + k * l)
    return LengthBound(ev, en, None if message_bits is None else message_bits / en)


def schedule_length_bound(eps: float, beta: float, n: int) -> float:
    """E(N) bound once p1 <= 2 eps, v >= 1/eps and n >= k l v / eps."""
    return n * (1 + (2 * (1 + eps) / ((1 - 2 * eps) * (1 - beta)) + beta * (1 + eps) / (1 - beta) + 1) * eps)


def schedule_error_bound(eps: float, beta: float) -> float:
    """P_e bound once p1, p2 <= 2 eps, p3 <= 2 eps^2 and v <= 2/eps."""
    return ((8 * beta + 4 * (1 - beta)) / ((1 - 2 * eps) * (1 - beta)) + 2 * beta / (1 - beta)) * eps


# ---------------------------------------------------------------------------
# exact per-attempt probabilities of the ideal-code simulator


def ideal_mdp_params(beta: float, eps: float, j: int, k: int, v: int, chunk_space: int, verify_mode: str = "collude") -> MdpParams:
    """Exact p1, p2, p3 of the ideal-code protocol under a given verifier behaviour.

    ``verify_mode`` is ``"honest"`` or ``"collude"`` (Byzantine verifiers back
    the decoded chunk whenever it is not the true one).  The lie-decoded-as-
    truth path, of probability eps/(S-1), is ignored.
    """
    if verify_mode not in ("honest", "collude"):
        raise ValueError("exact parameters are only available for 'honest' and 'collude'")
    wrong_hit = eps / (j - 1) if j > 1 else 0.0
    byz_push = beta if verify_mode == "collude" else 0.0
    # per-verifier probability that the decoded bin equals an unrelated false chunk's bin
    m = byz_push * (1 - eps) + (1 - byz_push) * wrong_hit
    acc_true = majority_pass_prob(k, 1 - eps) if j > 1 else 1.0
    acc_false = (1.0 / j) * acc_true + (1 - 1.0 / j) * majority_pass_prob(k, m)
    p3 = eps * acc_false
    p1 = (1 - eps) * (1 - acc_true) + eps * (1 - acc_false)
    lands_on_truth = eps / (chunk_space - 1) if chunk_space > 1 else 0.0
    p2 = (1 - lands_on_truth) * acc_false
    return MdpParams(p1, p2, p3, beta, v)


@dataclass(frozen=True)
class BoundReport:
    alpha: float
    k_min: int | None
    j_min: int | None
    a1_bound: float
    a2_bound: float
    a2_chain: float
    a2_exact: float
    a3: float
    p1_bound: float
    p2_bound: float
    p3_bound: float
    pe_bound_f: float
    pe_bound_mdp: float
    pe_bound_schedule: float
    attempts_bound: float
    channel_uses_bound: float
    channel_uses_bound_schedule: float
    rate_bound: float | None
    nominal_rate: float

    def to_dict(self) -> dict:
        return asdict(self)


def bound_report(params, tail: str = "chain") -> BoundReport:
    """Analytic bounds for a set of protocol parameters (duck-typed ProtocolParams)."""
    b, eps = params.byzantine_fraction, params.code_error
    eb = lemma1_bounds(b, eps, params.bin_count, params.verifier_count, tail)
    m = eb.mdp_params(b, params.chunk_count)
    fb = closed_form_f(m)
    sol = solve_mdp(m)
    lb = length_bound(eb.p1, b, params.block_length, params.chunk_count, params.verifier_count,
                      params.verify_block_length, params.message_bits)
    return BoundReport(
        alpha=eb.alpha,
        k_min=eb.k_min,
        j_min=eb.j_min,
        a1_bound=eb.a1,
        a2_bound=eb.a2,
        a2_chain=eb.a2_chain,
        a2_exact=eb.a2_exact,
        a3=eb.a3,
        p1_bound=eb.p1,
        p2_bound=eb.p2,
        p3_bound=eb.p3,
        pe_bound_f=min(1.0, fb.pe_bound),
        pe_bound_mdp=sol.total_error,
        pe_bound_schedule=schedule_error_bound(eps, b) if eps < 0.5 else float("inf"),
        attempts_bound=lb.attempts,
        channel_uses_bound=lb.channel_uses,
        channel_uses_bound_schedule=schedule_length_bound(eps, b, params.block_length) if eps < 0.5 else float("inf"),
        rate_bound=lb.rate,
        nominal_rate=params.message_bits / params.block_length,
    )
