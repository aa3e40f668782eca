"""Seeded Monte Carlo harness.

Trial t of an experiment with master seed s draws everything from
``SeedSequence(s, spawn_key=(t,))``, so results depend only on (config,
trials, seed) and never on how trials are spread over workers.  Reductions
are integer sums, hence order independent.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

from . import adversary as adv
from . import analysis, kernels
from .channel import capacity, certify_code, random_codebook
from .config import ConfigError, ExperimentConfig, build_strategy
from .kernels import CELL_NAMES, EVENT_NAMES
from .protocol import ideal_codes, join_chunks, run_session

Z95 = float(sps.norm.ppf(0.975))
SIGMAS = 3.0
ENGINES = ("auto", "kernel", "session")


# ---------------------------------------------------------------------------
# intervals


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes <= 0 else max(0.0, centre - half)
    hi = 1.0 if successes >= n else min(1.0, centre + half)
    return lo, hi


def rate_within_upper(successes: int, n: int, bound: float, z: float = SIGMAS) -> bool:
    """True unless the rate exceeds ``bound`` by more than z Wilson sigmas."""
    if n <= 0:
        return True
    return wilson_interval(successes, n, z)[0] <= bound


def rate_matches(successes: int, n: int, target: float, z: float = SIGMAS) -> bool:
    lo, hi = wilson_interval(successes, n, z)
    return lo <= target <= hi


def mean_within_upper(mean: float, sd: float, n: int, bound: float, z: float = SIGMAS) -> bool:
    return mean - z * sd / math.sqrt(max(n, 1)) <= bound


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(trial,))))


# ---------------------------------------------------------------------------
# aggregates


@dataclass
class TrialStats:
    trials: int
    errors: int
    aborts: int
    master_seed: int
    engine: str
    error_rate: float
    error_ci: tuple[float, float]
    mean_attempts: float
    sd_attempts: float
    attempts_ci: tuple[float, float]
    mean_channel_uses: float
    channel_uses_ci: tuple[float, float]
    uses_per_attempt: int
    block_length: int
    message_bits: int
    achieved_rate: float
    nominal_rate: float
    counts: dict = field(default_factory=dict)
    events: dict = field(default_factory=dict)
    attempts_sum: int = 0
    attempts_sq_sum: int = 0
    code_certified: dict | None = None

    @property
    def successes(self) -> int:
        return self.trials - self.errors

    @property
    def uses_over_n(self) -> float:
        return self.mean_channel_uses / self.block_length

    def count_table(self) -> np.ndarray:
        return np.array([[self.counts[c][e] for e in EVENT_NAMES] for c in CELL_NAMES], dtype=np.int64)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


def _round_sig(obj, digits: int = 9):
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return str(obj)
        return float(f"{obj:.{digits}g}")
    if isinstance(obj, dict):
        return {str(k): _round_sig(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_sig(v, digits) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return _round_sig(float(obj), digits)
    return obj


def canonical_json(obj) -> str:
    """Sorted keys, floats at 9 significant digits, trailing newline."""
    return json.dumps(_round_sig(obj), indent=2, sort_keys=True) + "\n"


def event_table(counts: np.ndarray) -> dict:
    """Event frequencies conditioned on C (truth sent) and on its complement.

    Besides the plain conditional frequencies the table carries the
    sub-conditionals used by the structural Lemma-type checks.
    """
    c = counts
    tc, tg, fw, fr = (c[i] for i in range(4))
    n_c = int(tc[0] + tg[0])
    n_nc = int(fw[0] + fr[0])

    def f(num, den):
        return float(num) / den if den else 0.0

    out = {"C": {"attempts": n_c}, "not_C": {"attempts": n_nc}}
    for e_idx, name in enumerate(EVENT_NAMES):
        if e_idx == 0:
            continue
        out["C"][name] = f(tc[e_idx] + tg[e_idx], n_c)
        out["not_C"][name] = f(fw[e_idx] + fr[e_idx], n_nc)
    out["C"]["A2_given_clean"] = f(tc[1], tc[0])
    out["C"]["A2_given_A1"] = f(tg[1], tg[0])
    out["C"]["A3_given_A1"] = f(tg[2], tg[0])
    out["collision"] = {"pairs": int(tg[0] + fw[0]), "rate": f(tg[2] + fw[2], tg[0] + fw[0])}
    out["p1_hat"] = out["C"]["B1"]
    out["p2_hat"] = out["not_C"]["B2"]
    out["p3_hat"] = out["C"]["B2"]
    return out


def _stats_from(cfg, engine, err, att, ab, counts, certified=None) -> TrialStats:
    p = cfg.params
    n = int(err.size)
    errors = int(err.sum())
    s1 = int(att.sum())
    s2 = int((att.astype(np.int64) ** 2).sum())
    mean = s1 / n
    var = max(0.0, (s2 - s1 * s1 / n) / (n - 1)) if n > 1 else 0.0
    sd = math.sqrt(var)
    half = Z95 * sd / math.sqrt(n)
    upa = p.uses_per_attempt
    mean_n = mean * upa
    return TrialStats(
        trials=n, errors=errors, aborts=int(ab.sum()), master_seed=cfg.master_seed, engine=engine,
        error_rate=errors / n, error_ci=wilson_interval(errors, n),
        mean_attempts=mean, sd_attempts=sd, attempts_ci=(mean - half, mean + half),
        mean_channel_uses=mean_n, channel_uses_ci=((mean - half) * upa, (mean + half) * upa),
        uses_per_attempt=upa, block_length=p.block_length, message_bits=p.message_bits,
        achieved_rate=p.message_bits / mean_n, nominal_rate=p.nominal_rate,
        counts={c: {e: int(counts[i, k]) for k, e in enumerate(EVENT_NAMES)} for i, c in enumerate(CELL_NAMES)},
        events=event_table(counts), attempts_sum=s1, attempts_sq_sum=s2, code_certified=certified,
    )


# ---------------------------------------------------------------------------
# experiment runner


def choose_engine(cfg: ExperimentConfig, engine: str = "auto") -> str:
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}")
    fits = (cfg.code_mode == "ideal" and cfg.pool_size is None
            and cfg.params.chunk_bits <= kernels.MAX_KERNEL_CHUNK_BITS)
    if engine == "kernel" and not fits:
        raise ConfigError("kernel engine needs ideal codes, an infinite pool and chunk_bits <= 40")
    if engine == "auto":
        return "kernel" if fits else "session"
    return engine


class _Context:
    """Per-experiment constants shared read-only by all trials."""

    def __init__(self, cfg: ExperimentConfig, engine: str, backend):
        self.cfg = cfg
        self.engine = engine
        self.backend = backend
        self.strategy = build_strategy(cfg)
        self.half = isinstance(self.strategy, adv.HalfSplit)
        p = cfg.params
        self.false_fixed = None
        if self.half and cfg.adversary.get("false_message") is not None:
            from .protocol import split_message

            self.false_fixed = np.array(split_message(cfg.adversary["false_message"], p).chunks, dtype=np.int64)
        self.certified = None
        if engine == "kernel":
            self.kargs = self.strategy.kernel_args(p)
        else:
            if cfg.code_mode == "ideal":
                self.g1, self.g2 = ideal_codes(p)
            else:
                crng = np.random.default_rng(cfg.codebook_seed)
                self.g1 = random_codebook(cfg.dmc, p.chunk_space, p.chunk_length, crng)
                self.g2 = random_codebook(cfg.dmc, p.bin_count, p.verify_block_length, crng)
                if cfg.certify_trials:
                    self.certified = {
                        "g1": certify_code(self.g1, cfg.dmc, cfg.certify_trials, crng),
                        "g2": certify_code(self.g2, cfg.dmc, cfg.certify_trials, crng),
                    }

    def false_chunks(self, chunks, rng):
        if self.false_fixed is not None and not np.array_equal(self.false_fixed, chunks):
            return self.false_fixed
        return adv.default_false_chunks(chunks, self.cfg.params.chunk_space, rng)

    def trial(self, t: int):
        cfg, p = self.cfg, self.cfg.params
        rng = trial_rng(cfg.master_seed, t)
        chunks = rng.integers(p.chunk_space, size=p.chunk_count, dtype=np.int64)
        if self.engine == "kernel":
            false = self.false_chunks(chunks, rng) if self.half else chunks
            ka = self.kargs
            return kernels.session_ideal(
                rng, chunks, false, ka["lie_levels"], half_split=ka["half_split"], space=p.chunk_space,
                j=p.bin_count, k=p.verifier_count, eps1=p.code_error, eps2=p.code_error,
                beta=p.byzantine_fraction, offset=ka["offset"], verify_mode=ka["verify_mode"],
                max_attempts=cfg.max_attempts, backend=self.backend,
            )
        tr = self.session(t, rng, chunks)
        return int(tr.error), len(tr.attempts), int(tr.aborted), tr.cell_counts

    def session(self, t, rng, chunks):
        from .protocol import SensorPool

        cfg, p = self.cfg, self.cfg.params
        w = join_chunks([int(c) for c in chunks], p)
        strategy = self.strategy
        if self.half and self.false_fixed is not None and np.array_equal(self.false_fixed, chunks):
            strategy = adv.HalfSplit(None)
        pool = SensorPool(p.byzantine_fraction, rng, size=cfg.pool_size)
        return run_session(p, cfg.dmc, self.g1, self.g2, w, pool, strategy, rng, cfg.max_attempts)


def run_experiment(cfg: ExperimentConfig, trials: int | None = None, master_seed: int | None = None,
                   workers: int = 1, backend: str | None = None, engine: str = "auto") -> TrialStats:
    """Run ``trials`` independent sessions and aggregate them."""
    if trials is not None or master_seed is not None:
        cfg = _with(cfg, trials, master_seed)
    if cfg.trials < 1:
        raise ConfigError("trials must be >= 1")
    eng = choose_engine(cfg, engine)
    ctx = _Context(cfg, eng, backend)
    T = cfg.trials
    err = np.zeros(T, dtype=np.int8)
    att = np.zeros(T, dtype=np.int64)
    ab = np.zeros(T, dtype=np.int8)

    def block(rng_range):
        acc = np.zeros((len(CELL_NAMES), len(EVENT_NAMES)), dtype=np.int64)
        for t in rng_range:
            e, a, b, c = ctx.trial(t)
            err[t], att[t], ab[t] = e, a, b
            acc += c
        return acc

    workers = max(1, int(workers))
    if workers == 1:
        total = block(range(T))
    else:
        step = max(1, -(-T // (workers * 4)))
        ranges = [range(s, min(T, s + step)) for s in range(0, T, step)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(block, ranges))
        total = np.sum(parts, axis=0)
    return _stats_from(cfg, eng, err, att, ab, total, ctx.certified)


def _with(cfg: ExperimentConfig, trials, seed) -> ExperimentConfig:
    from dataclasses import replace

    return replace(cfg, trials=cfg.trials if trials is None else int(trials),
                   master_seed=cfg.master_seed if seed is None else int(seed))


def session_transcripts(cfg: ExperimentConfig, trials: range):
    """Full transcripts for selected trials (object-level engine, same seeding)."""
    ctx = _Context(cfg, "session", None)
    for t in trials:
        rng = trial_rng(cfg.master_seed, t)
        p = cfg.params
        chunks = rng.integers(p.chunk_space, size=p.chunk_count, dtype=np.int64)
        yield t, ctx.session(t, rng, chunks)


# ---------------------------------------------------------------------------
# bound checks


@dataclass(frozen=True)
class BoundCheck:
    name: str
    estimate: float
    bound: float
    ok: bool
    kind: str
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        extra = f" ({self.note})" if self.note else ""
        return f"{status} {self.name}: estimate={self.estimate:.9g} bound={self.bound:.9g} [{self.kind}]{extra}"


def lemma1_checks(s: TrialStats, params, tail: str = "chain") -> list[BoundCheck]:
    """Empirical event frequencies against the verification-event inequalities.

    Structural checks compare empirical conditional frequencies with each
    other; analytic checks compare them with the closed-form bounds.
    """
    c = s.count_table()
    tc, tg, fw, fr = (c[i] for i in range(4))
    n_c = int(tc[0] + tg[0])
    n_nc = int(fw[0] + fr[0])
    ev = s.events
    out = []

    def upper(name, num, den, bound, kind, note=""):
        est = num / den if den else 0.0
        out.append(BoundCheck(name, est, bound, rate_within_upper(int(num), int(den), bound), kind, note))

    a1 = ev["C"]["A1"]
    upper("p1 <= P(A1|C) + P(A2|C,~A1)", tc[3] + tg[3], n_c, a1 + ev["C"]["A2_given_clean"], "structure")
    upper("p2 <= P(A2|~C) + P(A3|~C)", fw[4] + fr[4], n_nc, ev["not_C"]["A2"] + ev["not_C"]["A3"], "structure")
    upper("p3 <= P(A1|C) (P(A2|C,A1) + P(A3|C,A1))", tg[4] + tc[4], n_c,
          a1 * (ev["C"]["A2_given_A1"] + ev["C"]["A3_given_A1"]), "structure")

    if analysis.alpha_of(params.byzantine_fraction, params.code_error) < 0.5:
        eb = analysis.lemma1_bounds(params.byzantine_fraction, params.code_error, params.bin_count,
                                    params.verifier_count, tail)
        upper("P(A1|C) <= eps", tc[5] + tg[5], n_c, eb.a1, "analytic")
        upper("P(A2|C) <= A2 bound", tc[1] + tg[1], n_c, eb.a2, "analytic")
        upper("p1 <= eps + A2 bound", tc[3] + tg[3], n_c, eb.p1, "analytic")
        upper("p2 <= A2 bound + 1/j", fw[4] + fr[4], n_nc, eb.p2, "analytic")
        upper("p3 <= eps (A2 bound + 1/j)", tg[4] + tc[4], n_c, eb.p3, "analytic")

    pairs = int(tg[0] + fw[0])
    hits = int(tg[2] + fw[2])
    if pairs:
        target = 1.0 / params.bin_count
        out.append(BoundCheck("bin collision rate = 1/j", hits / pairs, target,
                              rate_matches(hits, pairs, target), "two-sided", f"{pairs} distinct pairs"))
    return out


def achievability_checks(s: TrialStats, params, tail: str = "chain") -> list[BoundCheck]:
    rep = analysis.bound_report(params, tail)
    return [
        BoundCheck("P_e <= f-based bound", s.error_rate, rep.pe_bound_f,
                   rate_within_upper(s.errors, s.trials, rep.pe_bound_f), "analytic"),
        BoundCheck("mean N <= E(N) bound", s.mean_channel_uses, rep.channel_uses_bound,
                   mean_within_upper(s.mean_channel_uses, s.sd_attempts * s.uses_per_attempt, s.trials,
                                     rep.channel_uses_bound), "analytic"),
    ]


def converse_checks(s: TrialStats, tol: float | None = None) -> list[BoundCheck]:
    """Decode success under the half-split attack should sit at 1/2."""
    rate = s.successes / s.trials
    if tol is None:
        ok = rate_matches(s.successes, s.trials, 0.5)
        note = "3 sigma"
    else:
        ok = abs(rate - 0.5) <= tol
        note = f"+/- {tol}"
    return [BoundCheck("P(decoded == W) = 1/2", rate, 0.5, ok, "two-sided", note)]


def verify_bounds(cfg: ExperimentConfig, s: TrialStats) -> list[BoundCheck]:
    p = cfg.params
    if cfg.strategy_name == "half_split":
        return converse_checks(s)
    checks = lemma1_checks(s, p, cfg.adversary.get("tail", "chain"))
    if analysis.alpha_of(p.byzantine_fraction, p.code_error) < 0.5:
        checks += achievability_checks(s, p, cfg.adversary.get("tail", "chain"))
    return checks


# ---------------------------------------------------------------------------
# sweeps

SWEEP_AXES = ("beta", "eps", "v", "j", "k", "strategy")
SWEEP_COLUMNS = (
    "point", "strategy", "beta", "eps", "v", "j", "k", "n", "trials", "errors", "aborts", "error_rate",
    "error_ci_lo", "error_ci_hi", "mean_attempts", "mean_channel_uses", "uses_over_n", "uses_ci_lo",
    "uses_ci_hi", "nominal_rate", "achieved_rate", "capacity", "achieved_over_capacity",
    "nominal_over_capacity", "pe_bound_f", "channel_uses_bound",
)


def grid_points(grid: dict) -> list[dict]:
    """Expand ``{"axes": {...}}`` (Cartesian) or ``{"points": [...]}`` (listed)."""
    import itertools

    if "points" in grid:
        pts = [dict(p) for p in grid["points"]]
    elif "axes" in grid:
        axes = grid["axes"]
        names = list(axes)
        if not names:
            raise ConfigError("grid 'axes' is empty")
        pts = [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]
    else:
        raise ConfigError("grid needs 'axes' or 'points'")
    if not pts:
        raise ConfigError("empty grid")
    for p in pts:
        bad = set(p) - set(SWEEP_AXES)
        if bad:
            raise ConfigError(f"unknown grid axis {sorted(bad)[0]!r}")
    return pts


def sweep(cfg: ExperimentConfig, grid: dict, trials: int | None = None, master_seed: int | None = None,
          workers: int = 1, backend: str | None = None) -> tuple[list[dict], list[TrialStats]]:
    """One row per grid point; every point reuses the master seed (common random numbers)."""
    pts = grid_points(grid)
    cap = capacity(cfg.dmc).capacity_bits
    rows, all_stats = [], []
    for i, pt in enumerate(pts):
        pcfg = cfg.replace(**pt) if pt else cfg
        s = run_experiment(pcfg, trials, master_seed, workers=workers, backend=backend)
        p = pcfg.params
        try:
            rep = analysis.bound_report(p, pcfg.adversary.get("tail", "chain"))
            pe_b, en_b = rep.pe_bound_f, rep.channel_uses_bound
        except analysis.RegimeError:
            pe_b = en_b = float("nan")
        rows.append({
            "point": i, "strategy": pcfg.strategy_name, "beta": p.byzantine_fraction, "eps": p.code_error,
            "v": p.chunk_count, "j": p.bin_count, "k": p.verifier_count, "n": p.block_length,
            "trials": s.trials, "errors": s.errors, "aborts": s.aborts, "error_rate": s.error_rate,
            "error_ci_lo": s.error_ci[0], "error_ci_hi": s.error_ci[1], "mean_attempts": s.mean_attempts,
            "mean_channel_uses": s.mean_channel_uses, "uses_over_n": s.uses_over_n,
            "uses_ci_lo": s.channel_uses_ci[0] / p.block_length, "uses_ci_hi": s.channel_uses_ci[1] / p.block_length,
            "nominal_rate": p.nominal_rate, "achieved_rate": s.achieved_rate, "capacity": cap,
            "achieved_over_capacity": s.achieved_rate / cap if cap > 0 else float("nan"),
            "nominal_over_capacity": p.nominal_rate / cap if cap > 0 else float("nan"),
            "pe_bound_f": pe_b, "channel_uses_bound": en_b,
        })
        all_stats.append(s)
    return rows, all_stats


def rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(SWEEP_COLUMNS), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# ---------------------------------------------------------------------------
# forward simulation of the MDP


@dataclass(frozen=True)
class WalkEstimate:
    mean: float
    sd: float
    n: int
    unfinished: int

    @property
    def stderr(self) -> float:
        return self.sd / math.sqrt(self.n)

    def within(self, value: float, z: float = SIGMAS) -> bool:
        # exact analytic values can sit on a zero-variance estimate
        return abs(self.mean - value) <= z * self.stderr + 1e-12


def run_mdp_walks(m: analysis.MdpParams, policy, *, length_mode: bool, start: str, n_walks: int = 10**6,
                  seed: int = 0, backend: str | None = None) -> WalkEstimate:
    """Monte Carlo estimate of e_0 / e_0' (error mode) or q_0 / q_0' (length mode)."""
    rng = np.random.default_rng(seed)
    err, steps, unfinished = kernels.mdp_walks(rng, m, policy, length_mode=length_mode, start=start,
                                               n_walks=n_walks, backend=backend)
    x = steps.astype(np.float64) if length_mode else err.astype(np.float64)
    return WalkEstimate(float(x.mean()), float(x.std(ddof=1)), int(n_walks), unfinished)


__all__ = [
    "TrialStats", "BoundCheck", "WalkEstimate", "wilson_interval", "rate_within_upper", "rate_matches",
    "mean_within_upper", "trial_rng", "event_table", "run_experiment", "choose_engine", "lemma1_checks",
    "achievability_checks", "converse_checks", "verify_bounds", "grid_points", "sweep", "rows_csv",
    "run_mdp_walks", "canonical_json", "session_transcripts", "SWEEP_COLUMNS",
]
