import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from byzfusion import adversary as adv
from byzfusion import analysis
from byzfusion.channel import bsc
from byzfusion.config import parse_config
from byzfusion.protocol import ProtocolParams, SensorPool, fresh_binning, ideal_codes, run_session
from byzfusion.sim import run_experiment


def params(space_bits=3, v=2, beta=0.3, j=4, k=5):
    return ProtocolParams(space_bits * v, v, 10 * v, j, k, 1, 0.05, beta)


def view(p, chunks=(5, 2), idx=0, **kw):
    base = dict(message=0, true_chunks=tuple(chunks), chunk_index=idx, sensor_id=1, transmitter_id=1,
                transmitter_byzantine=True, params=p)
    base.update(kw)
    return adv.AdversaryView(**base)


class TestSimpleStrategies:
    def test_honest_mimic(self):
        s = adv.honest_mimic()
        p = params()
        b = fresh_binning(p.chunk_space, p.bin_count, np.random.default_rng(0))
        assert s.chunk_action(view(p)) is adv.HONEST
        assert s.verify_action(view(p, binning=b, decoded_chunk=3)) is adv.HONEST

    def test_always_lie_offset(self):
        p = params()
        assert adv.always_lie(offset=1).chunk_action(view(p)) == adv.Substitute(6)
        assert adv.always_lie(offset=3).chunk_action(view(p)) == adv.Substitute(0)

    def test_zero_offset_rejected(self):
        with pytest.raises(adv.StrategyError):
            adv.always_lie(offset=0)
        with pytest.raises(adv.StrategyError):
            adv.always_lie(offset=8).start_session(0, (0, 0), params(), np.random.default_rng(0))

    def test_bad_verify_mode(self):
        with pytest.raises(adv.StrategyError):
            adv.always_lie(verify="loud")

    def test_collusion_backs_decoded_chunk(self):
        p = params()
        b = fresh_binning(p.chunk_space, p.bin_count, np.random.default_rng(1))
        s = adv.always_lie()
        assert s.verify_action(view(p, binning=b, decoded_chunk=6)) == adv.Substitute(b.bin_of(6))
        assert s.verify_action(view(p, binning=b, decoded_chunk=5)) is adv.HONEST
        honest = adv.always_lie(verify="honest")
        assert honest.verify_action(view(p, binning=b, decoded_chunk=6)) is adv.HONEST

    def test_obstruct_votes_against_honest_transmitters(self):
        p = params()
        b = fresh_binning(p.chunk_space, p.bin_count, np.random.default_rng(2))
        s = adv.always_lie(verify="obstruct")
        act = s.verify_action(view(p, binning=b, decoded_chunk=5, transmitter_byzantine=False))
        assert act == adv.Substitute((b.bin_of(5) + 1) % p.bin_count)


class TestMdpOptimal:
    def test_hand_case_lies(self):
        sol = analysis.solve_mdp(analysis.MdpParams(0.0, 0.5, 0.0, 0.3, 1))
        s = adv.mdp_optimal(sol)
        assert s.lies_at(0)
        assert abs(sol.e_prime[0] - 0.5 / 0.85) < 1e-12

    def test_p2_zero_branches_tie_and_lie_is_chosen(self):
        m = analysis.MdpParams(0.1, 0.0, 0.01, 0.3, 5)
        sol = analysis.solve_mdp(m)
        lie = analysis.evaluate_error_policy(m, np.ones(5, dtype=np.int8))
        truth = analysis.evaluate_error_policy(m, np.zeros(5, dtype=np.int8))
        assert np.allclose(lie[1], truth[1], atol=1e-14)
        assert np.all(sol.decision == analysis.LIE)

    def test_parameter_mismatch(self):
        sol = analysis.solve_mdp(analysis.MdpParams(0.1, 0.1, 0.01, 0.3, 3))
        with pytest.raises(adv.StrategyError):
            adv.mdp_optimal(sol).kernel_args(params(v=2))
        with pytest.raises(adv.StrategyError):
            adv.mdp_optimal(sol).start_session(0, (0, 0, 0), ProtocolParams(9, 3, 30, 4, 5, 1, 0.05, 0.2),
                                               np.random.default_rng(0))

    def test_dominates_simpler_strategies(self):
        base = {"dmc": {"bsc": 0.1}, "schedule": {"eps": 0.1, "beta": 0.3, "chunk_bits": 8},
                "trials": 8000, "master_seed": 5}
        rates = {}
        for name, extra in [("mdp_optimal", {"mdp_source": "exact"}), ("always_lie", {}), ("honest_mimic", {})]:
            cfg = parse_config({**base, "adversary": {"strategy": name, **extra}})
            rates[name] = run_experiment(cfg)
        m = rates["mdp_optimal"]
        for other in ("always_lie", "honest_mimic"):
            o = rates[other]
            se = np.sqrt((m.error_rate * (1 - m.error_rate) + o.error_rate * (1 - o.error_rate)) / m.trials)
            assert m.error_rate >= o.error_rate - 3 * se
        assert m.error_rate > rates["honest_mimic"].error_rate


class TestHonestMimicEquivalence:
    def test_byte_identical_inputs(self):
        p0 = params(beta=0.0)
        p4 = params(beta=0.4)
        dmc = bsc(0.1)
        for seed in range(10):
            outs = []
            for p in (p0, p4):
                rng = np.random.default_rng(seed)
                g1, g2 = ideal_codes(p)
                tr = run_session(p, dmc, g1, g2, 17, SensorPool(p.byzantine_fraction, rng), adv.honest_mimic(), rng)
                outs.append([(a.sent_chunk, a.decoded_chunk, tuple(v.sent_bin for v in a.verifiers)) for a in tr.attempts])
            assert outs[0] == outs[1]

    def test_statistics_match_beta0(self):
        doc = {"dmc": {"bsc": 0.1},
               "params": dict(params(beta=0.4).to_dict()),
               "adversary": {"strategy": "honest_mimic"}, "trials": 4000, "master_seed": 8}
        a = run_experiment(parse_config(doc))
        doc["params"]["byzantine_fraction"] = 0.0
        b = run_experiment(parse_config(doc))
        assert a.to_dict()["errors"] == b.to_dict()["errors"]
        assert a.attempts_sum == b.attempts_sum


class TestHalfSplit:
    def test_split_rule(self):
        assert adv.HalfSplit.split(0.5) == (0.0, 0.5)
        lo, hi = adv.HalfSplit.split(0.6)
        assert abs(lo - 0.1) < 1e-12 and hi == 0.5
        with pytest.raises(adv.StrategyError):
            adv.HalfSplit.split(0.45)

    def test_false_message_must_differ(self):
        p = params(beta=0.5)
        with pytest.raises(adv.StrategyError):
            adv.half_split(false_message=9).start_session(9, (1, 1), p, np.random.default_rng(0))

    def test_group_fraction(self):
        p = params(beta=0.6)
        s = adv.half_split()
        coord = s.start_session(0, (0, 0), p, np.random.default_rng(0))
        flags = [s.in_false_group(view(p, chunks=(0, 0), sensor_id=i, coordination=coord)) for i in range(20000)]
        assert abs(np.mean(flags) - 0.5 / 0.6) < 0.01
        # membership is fixed once drawn
        assert s.in_false_group(view(p, chunks=(0, 0), sensor_id=7, coordination=coord)) == flags[7]

    def test_default_false_message_differs_in_one_chunk(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            c = rng.integers(8, size=5)
            f = adv.default_false_chunks(c, 8, rng)
            assert (f != c).sum() == 1

    @pytest.mark.parametrize("eps,j", [(0.0, 2), (0.1, 2), (0.05, 3), (0.3, 5)])
    def test_micro_symmetry(self, eps, j):
        dist = adv.half_split_micro_attempts(eps, j)
        assert abs(sum(dist.values()) - 1.0) < 1e-12
        for key, p in dist.items():
            assert abs(dist.get(adv.swap_half_split(key), 0.0) - p) < 1e-15
        sess = adv.half_split_micro_sessions(eps, j, depth=3 if j == 2 else 2)
        for key, p in sess.items():
            assert abs(sess.get(adv.swap_half_split_session(key), 0.0) - p) < 1e-15
        assert abs(adv.half_split_micro_success(eps, j) - 0.5) < 1e-12

    def test_micro_instance_matches_simulator(self):
        eps, j = 0.1, 2
        p = ProtocolParams(1, 1, 4, j, 1, 1, eps, 0.5)
        dist = adv.half_split_micro_attempts(eps, j)
        acc = sum(q for key, q in dist.items() if key[-1])
        g1, g2 = ideal_codes(p)
        n = 20000
        accepted = right = 0
        for seed in range(n // 10):
            rng = np.random.default_rng(seed)
            for _ in range(10):
                w = int(rng.integers(2))
                tr = run_session(p, bsc(0.1), g1, g2, w, SensorPool(0.5, rng), adv.half_split(1 - w), rng)
                first = tr.attempts[0]
                accepted += first.accepted
                right += tr.decoded_message == w
        assert abs(accepted / n - acc) < 4 * np.sqrt(acc * (1 - acc) / n)
        assert abs(right / n - 0.5) < 4 * np.sqrt(0.25 / n)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(2, 9), st.integers(1, 50), st.data())
def test_strategy_outputs_are_legal(bits, v, j, offset, data):
    p = ProtocolParams(bits * v, v, 2 * v, j, 3, 1, 0.1, 0.6)
    if offset % p.chunk_space == 0:
        offset += 1
    chunks = tuple(data.draw(st.integers(0, p.chunk_space - 1)) for _ in range(v))
    idx = data.draw(st.integers(0, v - 1))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32)))
    b = fresh_binning(p.chunk_space, j, rng)
    decoded = data.draw(st.integers(0, p.chunk_space - 1))
    tx_byz = data.draw(st.booleans())
    mdp = analysis.solve_mdp(analysis.MdpParams(0.1, 0.2, 0.01, 0.6, v))
    for s in (adv.honest_mimic(), adv.always_lie(offset, "obstruct"), adv.always_lie(offset),
              adv.mdp_optimal(mdp, offset=offset), adv.half_split()):
        coord = s.start_session(0, chunks, p, rng)
        vw = view(p, chunks=chunks, idx=idx, binning=b, decoded_chunk=decoded, coordination=coord,
                  transmitter_byzantine=tx_byz, sensor_id=data.draw(st.integers(0, 100)))
        ca = s.chunk_action(vw)
        va = s.verify_action(vw)
        if isinstance(ca, adv.Substitute):
            assert 0 <= ca.value < p.chunk_space
        if isinstance(va, adv.Substitute):
            assert 0 <= va.value < j
