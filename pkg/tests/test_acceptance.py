"""End-to-end acceptance checks, one printed PASS/FAIL line per criterion.

Each test records its outcome through ``record_criterion`` and then asserts
it, so a failing criterion also fails the run.
"""

import math
import time

import numpy as np
import pytest

from byzfusion import adversary as adv
from byzfusion import analysis as an
from byzfusion import sim
from byzfusion.channel import bsc, capacity
from byzfusion.config import load_config, parse_config
from byzfusion.protocol import BinAssignment, fresh_binning, verify_chunk


def h2(p):
    return 0.0 if p in (0.0, 1.0) else -p * math.log2(p) - (1 - p) * math.log2(1 - p)


@pytest.fixture(scope="module")
def reference(configs_dir):
    cfg = load_config(configs_dir / "reference.json")
    t0 = time.perf_counter()
    s = sim.run_experiment(cfg)
    return cfg, s, time.perf_counter() - t0


def test_criterion_1_capacity(record_criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for p in (0.0, 0.05, 0.1, 0.25, 0.5):
        c = capacity(bsc(p)).capacity_bits
        worst = max(worst, abs(c - (1 - h2(p))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 1.0
    record_criterion(1, ok, f"max |C - (1 - H2(p))| = {worst:.2e}, {dt:.3f} s")
    assert ok


def test_criterion_2_achievability(reference, record_criterion):
    cfg, s, dt = reference
    assert cfg.params.chunk_count == 20 and cfg.params.bin_count == 20 and cfg.params.verifier_count == 65
    assert s.trials == 20000 and cfg.strategy_name == "mdp_optimal"
    checks = sim.achievability_checks(s, cfg.params)
    ok = all(c.ok for c in checks) and dt < 120
    detail = "; ".join(f"{c.name}: {c.estimate:.4g} vs {c.bound:.4g}" for c in checks)
    record_criterion(2, ok, f"{detail}; {dt:.1f} s")
    assert ok


def test_criterion_3_trend(configs_dir, record_criterion):
    cfg = load_config(configs_dir / "reference.json")
    rows, stats = sim.sweep(cfg, {"axes": {"eps": [0.1, 0.05, 0.02]}})
    ok = True
    for a, b in zip(stats, stats[1:]):
        # P_e non-increasing within CI overlap
        ok &= b.error_rate <= a.error_rate or b.error_ci[0] <= a.error_ci[1]
        ua, ub = a.channel_uses_ci[1] / a.block_length, b.channel_uses_ci[0] / b.block_length
        ok &= b.uses_over_n <= a.uses_over_n or ub <= ua
    ok &= all(r["uses_over_n"] >= 1 for r in rows)
    detail = ", ".join(f"eps={r['eps']}: P_e={r['error_rate']:.4f} N/n={r['uses_over_n']:.4f}" for r in rows)
    record_criterion(3, ok, detail)
    assert ok


def test_criterion_4_converse(configs_dir, record_criterion):
    cfg = load_config(configs_dir / "half_split.json")
    rates = {}
    for beta in (0.5, 0.6):
        s = sim.run_experiment(cfg.replace(beta=beta), trials=10000)
        rates[beta] = s.successes / s.trials
    ok = all(abs(r - 0.5) <= 0.02 for r in rates.values())
    sym = True
    for eps in (0.0, 0.1, 0.3):
        dist = adv.half_split_micro_attempts(eps, 2)
        sym &= all(abs(p - dist[adv.swap_half_split(k)]) < 1e-15 for k, p in dist.items())
        sess = adv.half_split_micro_sessions(eps, 2, depth=3)
        sym &= all(abs(p - sess[adv.swap_half_split_session(k)]) < 1e-15 for k, p in sess.items())
        sym &= abs(adv.half_split_micro_success(eps, 2) - 0.5) < 1e-12
    ok &= sym
    record_criterion(4, ok, ", ".join(f"beta={b}: success={r:.4f}" for b, r in rates.items())
                     + f"; micro symmetry {'ok' if sym else 'broken'}")
    assert ok


def mdp_points():
    eb = an.lemma1_bounds(0.3, 0.05, 20, 65)
    return {
        "hand v=1": an.MdpParams(0.0, 0.5, 0.0, 0.3, 1),
        "schedule v=20": eb.mdp_params(0.3, 20),
        "generic v=8": an.MdpParams(0.25, 0.1, 0.05, 0.4, 8),
    }


def test_criterion_5_mdp_walks(record_criterion):
    ok = True
    parts = []
    for i, (name, m) in enumerate(mdp_points().items()):
        sol = an.solve_mdp(m)
        targets = [(sol.e[0], False, "honest", sol.decision), (sol.e_prime[0], False, "byzantine", sol.decision),
                   (sol.q[0], True, "honest", sol.length_decision),
                   (sol.q_prime[0], True, "byzantine", sol.length_decision)]
        worst = 0.0
        for t, (value, length_mode, start, policy) in enumerate(targets):
            w = sim.run_mdp_walks(m, policy, length_mode=length_mode, start=start, n_walks=10**6, seed=100 * i + t)
            ok &= w.within(value) and w.unfinished == 0
            if w.stderr > 0:
                worst = max(worst, abs(w.mean - value) / w.stderr)
        parts.append(f"{name}: max dev {worst:.2f} sigma")
    hand = an.solve_mdp(mdp_points()["hand v=1"]).e_prime[0]
    ok &= abs(hand - 0.5882) < 1e-4
    record_criterion(5, ok, "; ".join(parts) + f"; hand e0'={hand:.4f}")
    assert ok


def test_criterion_6_lemma1_structure(reference, record_criterion):
    cfg, s_opt, _ = reference
    results = {"mdp_optimal": s_opt,
               "always_lie": sim.run_experiment(cfg.replace(strategy="always_lie"))}
    ok = True
    parts = []
    for name, s in results.items():
        checks = [c for c in sim.lemma1_checks(s, cfg.params) if c.kind in ("structure", "two-sided")]
        assert len(checks) == 4
        ok &= all(c.ok for c in checks)
        parts.append(f"{name}: {sum(c.ok for c in checks)}/{len(checks)}")
    # direct binning collision frequency over fresh assignments
    rng = np.random.default_rng(77)
    j, draws = 20, 20000
    hits = 0
    for _ in range(draws):
        b = fresh_binning(2**16, j, rng)
        c1, c2 = rng.choice(2**16, size=2, replace=False)
        hits += b.bin_of(int(c1)) == b.bin_of(int(c2))
    coll_ok = sim.rate_matches(hits, draws, 1 / j)
    ok &= coll_ok
    record_criterion(6, ok, "; ".join(parts) + f"; fresh binning collision {hits / draws:.4f} vs {1 / j}")
    assert ok


def test_criterion_7_invariants(record_criterion):
    rng = np.random.default_rng(2024)
    n_inst = 5000
    fails = {"q increment": 0, "q' penalty": 0, "e <= f": 0, "f <= closed form": 0, "a-branch": 0}
    for _ in range(n_inst):
        p1 = rng.uniform(0, 0.95)
        m = an.MdpParams(p1, rng.uniform(0, 1), rng.uniform(0, 1 - p1), rng.uniform(0, 0.95),
                         int(rng.integers(1, 41)))
        s = an.solve_mdp(m)
        f, fp, ca, cb = an.f_branches(m)
        fb = an.closed_form_f(m)
        tol = 1e-9 * (1 + np.abs(fb.f_prime))
        fails["q increment"] += not (np.all(np.diff(-s.q) >= 1 - 1e-9) and np.all(np.diff(-s.q_prime) >= 1 - 1e-9))
        fails["q' penalty"] += not np.all(s.q_prime <= 1 / (1 - m.beta) + s.q + 1e-9 * (1 + s.q))
        fails["e <= f"] += not (np.all(s.e <= f + tol) and np.all(s.e_prime <= fp + tol))
        fails["f <= closed form"] += not (np.all(f <= fb.f + tol) and np.all(fp <= fb.f_prime + tol))
        fails["a-branch"] += not np.all(ca >= cb - tol[:-1])
    bad_majority = 0
    for k in range(1, 13):
        b = BinAssignment(4, 2, 0, np.array([0, 1, 0, 1]))
        for matches in range(k + 1):
            responses = [0] * matches + [1] * (k - matches)
            bad_majority += verify_chunk(0, b, responses, k) != (matches > k - matches)
    ok = not any(fails.values()) and bad_majority == 0
    record_criterion(7, ok, f"{n_inst} random instances, violations {fails}; majority mismatches {bad_majority}")
    assert ok


def test_criterion_8_determinism(configs_dir, record_criterion):
    small = parse_config({
        "dmc": {"bsc": 0.1},
        "params": {"message_bits": 8, "chunk_count": 4, "block_length": 40, "bin_count": 8, "verifier_count": 7,
                   "verify_block_length": 1, "code_error": 0.05, "byzantine_fraction": 0.25},
        "adversary": {"strategy": "mdp_optimal"}, "pool_size": 60, "trials": 300, "master_seed": 12,
    })
    cases = {
        "reference": (load_config(configs_dir / "reference.json"), 4000),
        "half_split": (load_config(configs_dir / "half_split.json"), 2000),
        "finite pool session": (small, None),
        "random codebook": (load_config(configs_dir / "codebook_small.json"), None),
    }
    ok = True
    for name, (cfg, trials) in cases.items():
        a = sim.run_experiment(cfg, trials=trials, workers=1).to_json().encode()
        b = sim.run_experiment(cfg, trials=trials, workers=8).to_json().encode()
        c = sim.run_experiment(cfg, trials=trials, workers=1).to_json().encode()
        ok &= a == b == c
    record_criterion(8, ok, f"byte-identical JSON at workers 1 and 8 for {', '.join(cases)}")
    assert ok
