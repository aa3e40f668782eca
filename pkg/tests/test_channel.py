import json
import math

import numpy as np
import pytest

from byzfusion.channel import (
    ChannelCode, ChannelError, Dmc, SentinelSequence, binary_entropy, bsc, capacity, certify_code,
    decode, encode, ideal_code, identity_channel, ml_decode_batch, random_codebook, transmit,
)


def h2(p):
    # independent closed form, kept apart from the library helper
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def hamming_reference(codewords, received):
    """Brute-force BSC maximum likelihood: minimum Hamming distance, lowest index on ties."""
    out = []
    for r in received:
        best, best_d = 0, None
        for m, c in enumerate(codewords):
            d = sum(int(a != b) for a, b in zip(c, r))
            if best_d is None or d < best_d:
                best, best_d = m, d
        out.append(best)
    return np.array(out)


class TestDmc:
    def test_rejects_bad_rows(self):
        with pytest.raises(ChannelError):
            Dmc(np.array([[0.5, 0.4], [0.1, 0.9]]))
        with pytest.raises(ChannelError):
            Dmc(np.array([[1.2, -0.2], [0.1, 0.9]]))
        with pytest.raises(ChannelError):
            Dmc(np.zeros((0, 2)))

    def test_row_tolerance(self):
        Dmc(np.array([[0.5, 0.5 + 5e-13], [0.0, 1.0]]))
        with pytest.raises(ChannelError):
            Dmc(np.array([[0.5, 0.5 + 1e-10], [0.0, 1.0]]))

    def test_json_round_trip(self, tmp_path):
        d = Dmc(np.array([[0.7, 0.2, 0.1], [0.0, 0.5, 0.5]]))
        path = tmp_path / "d.json"
        path.write_text(json.dumps(d.to_json()))
        back = Dmc.load(path)
        assert np.array_equal(back.transition, d.transition)
        assert back.input_alphabet_size == 2 and back.output_alphabet_size == 3

    def test_declared_shape_checked(self):
        with pytest.raises(ChannelError):
            Dmc.from_json({"inputs": 3, "outputs": 2, "rows": [[1, 0], [0, 1]]})


class TestCapacity:
    @pytest.mark.parametrize("p", [0.0, 0.05, 0.1, 0.25, 0.5])
    def test_bsc_closed_form(self, p):
        res = capacity(bsc(p))
        assert abs(res.capacity_bits - (1 - h2(p))) < 1e-6
        assert abs(res.optimal_input.sum() - 1) < 1e-12

    def test_bsc01_value(self):
        assert abs(capacity(bsc(0.1)).capacity_bits - 0.5310044064) < 1e-6

    def test_trace_monotone_and_bracket(self):
        d = Dmc(np.array([[0.6, 0.3, 0.1], [0.1, 0.2, 0.7], [0.3, 0.4, 0.3]]))
        res = capacity(d, tolerance=1e-10)
        tr = np.array(res.lower_trace)
        assert np.all(np.diff(tr) >= -1e-12)
        assert res.bracket < 1e-10

    def test_erasure_and_z_channel(self):
        e = 0.3
        bec = Dmc(np.array([[1 - e, e, 0.0], [0.0, e, 1 - e]]))
        assert abs(capacity(bec).capacity_bits - (1 - e)) < 1e-6
        p = 0.2
        z = Dmc(np.array([[1.0, 0.0], [p, 1 - p]]))
        closed = math.log2(1 + (1 - p) * p ** (p / (1 - p)))
        assert abs(capacity(z).capacity_bits - closed) < 1e-6

    def test_identity_and_useless(self):
        assert abs(capacity(identity_channel(4)).capacity_bits - 2.0) < 1e-9
        assert capacity(Dmc(np.full((3, 2), 0.5))).capacity_bits < 1e-9

    def test_bad_tolerance(self):
        with pytest.raises(ChannelError):
            capacity(bsc(0.1), tolerance=0)

    def test_library_entropy_matches_oracle(self):
        for p in (0.0, 0.01, 0.3, 0.5, 1.0):
            assert abs(binary_entropy(p) - h2(p)) < 1e-12


class TestEncodeTransmitDecode:
    def test_codebook_row_lookup(self):
        rng = np.random.default_rng(0)
        code = random_codebook(bsc(0.1), 4, 6, rng)
        assert np.array_equal(encode(code, 0), code.codewords[0])
        with pytest.raises(ChannelError):
            encode(code, 4)

    def test_sentinel(self):
        s = encode(ideal_code(4, 2, 0.1), 3)
        assert isinstance(s, SentinelSequence) and list(s) == [3, 3] and len(s) == 2

    def test_identity_channel_passthrough(self):
        rng = np.random.default_rng(1)
        x = rng.integers(3, size=50)
        assert np.array_equal(transmit(identity_channel(3), x, rng), x)

    def test_deterministic_flip(self):
        out = transmit(bsc(1.0), [0, 1, 0, 1], np.random.default_rng(0))
        assert out.tolist() == [1, 0, 1, 0]

    def test_flip_rate(self):
        rng = np.random.default_rng(2)
        x = np.zeros(10**6, dtype=np.int64)
        assert abs(transmit(bsc(0.2), x, rng).mean() - 0.2) < 0.002

    def test_reproducible(self):
        x = np.arange(20) % 2
        a = transmit(bsc(0.3), x, np.random.default_rng(9))
        b = transmit(bsc(0.3), x, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_invalid_symbol(self):
        with pytest.raises(ChannelError):
            transmit(bsc(0.1), [0, 2], np.random.default_rng(0))

    @pytest.mark.parametrize("mode", ["ideal", "random_codebook"])
    def test_noiseless_round_trip_m8(self, mode):
        rng = np.random.default_rng(3)
        dmc = identity_channel(2)
        code = ideal_code(8, 3, 0.0) if mode == "ideal" else random_codebook(dmc, 8, 5, rng)
        for m in range(8):
            assert decode(code, dmc, transmit(dmc, encode(code, m), rng), rng) == m

    def test_exhaustive_identity_round_trip_m256(self):
        rng = np.random.default_rng(4)
        dmc = identity_channel(4)
        code = random_codebook(dmc, 256, 4, rng)
        rec = np.stack([transmit(dmc, encode(code, m), rng) for m in range(256)])
        assert np.array_equal(ml_decode_batch(code, dmc, rec), np.arange(256))
        ideal = ideal_code(256, 1, 0.0)
        assert all(decode(ideal, dmc, encode(ideal, m), rng) == m for m in range(256))

    def test_length_mismatch(self):
        code = ideal_code(4, 3, 0.0)
        with pytest.raises(ChannelError):
            decode(code, bsc(0.1), SentinelSequence(1, 2), np.random.default_rng(0))

    def test_ideal_wrong_index_uniform(self):
        rng = np.random.default_rng(5)
        code = ideal_code(4, 1, 0.3)
        out = np.array([decode(code, bsc(0.1), encode(code, 1), rng) for _ in range(40000)])
        assert abs((out != 1).mean() - 0.3) < 0.01
        wrong = out[out != 1]
        for w in (0, 2, 3):
            assert abs((wrong == w).mean() - 1 / 3) < 0.02

    def test_ideal_zero_error(self):
        rng = np.random.default_rng(6)
        code = ideal_code(16, 2, 0.0)
        assert all(decode(code, bsc(0.4), encode(code, 7), rng) == 7 for _ in range(200))

    def test_ml_ties_lowest_index(self):
        code = ChannelCode(3, 2, "random_codebook", codewords=np.array([[1, 1], [0, 0], [0, 0]]))
        dmc = bsc(0.1)
        assert decode(code, dmc, np.array([0, 0])) == 1
        assert decode(code, dmc, np.array([0, 1])) == 0  # all three tie at distance 1

    def test_ml_matches_reference_m4_n64(self):
        rng = np.random.default_rng(7)
        dmc = bsc(0.05)
        code = random_codebook(dmc, 4, 64, rng)
        trials = 10**5
        msgs = rng.integers(4, size=trials)
        rec = transmit(dmc, code.codewords[msgs], rng)
        ours = ml_decode_batch(code, dmc, rec)
        ref = hamming_reference(code.codewords.tolist(), rec[:2000].tolist())
        assert np.array_equal(ours[:2000], ref)
        # brute-force error rate on the full set, computed by distance
        dist = (rec[:, None, :] != code.codewords[None, :, :]).sum(axis=-1)
        ref_full = np.argmin(dist, axis=1)
        assert (ours != msgs).mean() <= (ref_full != msgs).mean() + 0.003

    def test_zero_probability_transitions(self):
        z = Dmc(np.array([[1.0, 0.0], [0.5, 0.5]]))
        code = ChannelCode(2, 3, "random_codebook", codewords=np.array([[0, 0, 0], [1, 1, 1]]))
        # an output 1 is impossible from input 0
        assert decode(code, z, np.array([1, 0, 0])) == 1


class TestCertify:
    def test_ideal_declared_rate(self):
        code = ideal_code(8, 1, 0.05)
        est = certify_code(code, bsc(0.1), 10**5, np.random.default_rng(0))
        assert abs(est - 0.05) < 0.005
        assert code.certified_error_prob == est

    def test_noiseless(self):
        rng = np.random.default_rng(1)
        dmc = identity_channel(2)
        code = random_codebook(dmc, 4, 4, rng)
        assert certify_code(code, dmc, 1000, rng) == 0.0

    def test_bsc_m2_n32_vs_reference(self):
        rng = np.random.default_rng(2)
        dmc = bsc(0.1)
        code = random_codebook(dmc, 2, 32, rng)
        est = certify_code(code, dmc, 20000, rng)
        msgs = rng.integers(2, size=20000)
        rec = transmit(dmc, code.codewords[msgs], rng)
        ref = hamming_reference(code.codewords.tolist(), rec.tolist())
        assert abs(est - (ref != msgs).mean()) < 0.01

    def test_trials_validated(self):
        with pytest.raises(ChannelError):
            certify_code(ideal_code(2, 1, 0.1), bsc(0.1), 0, np.random.default_rng(0))


def test_codebook_json_round_trip():
    rng = np.random.default_rng(0)
    code = random_codebook(bsc(0.2), 4, 5, rng)
    back = ChannelCode.from_json(json.loads(json.dumps(code.to_json())))
    assert np.array_equal(back.codewords, code.codewords)
    ideal = ChannelCode.from_json(ideal_code(4, 2, 0.1).to_json())
    assert ideal.error_prob == 0.1 and ideal.mode == "ideal"


def test_code_against_channel_alphabet():
    code = ChannelCode(2, 2, "random_codebook", codewords=np.array([[0, 2], [1, 1]]))
    with pytest.raises(ChannelError):
        code.check_against(bsc(0.1))


def test_ideal_error_prob_range():
    with pytest.raises(ChannelError):
        ideal_code(4, 1, 1.0)
