import math
from itertools import product

import numpy as np
import pytest

from npad.core import ContractError, RngStream
from npad.decode import (
    DecodeLimits,
    NoiseSchedule,
    ScheduledNoise,
    SearchSpaceError,
    SilentNoise,
    beam_decode,
    beam_search,
    default_limits,
    diverse_beam_decode,
    diverse_beam_search,
    exact_decode,
    exact_search,
    force_score,
    greedy_decode,
    greedy_search,
    sample_decode,
    sample_search,
)
from npad.model import EOS, BoundModel, score_sequence
from conftest import make_params
from table_models import TableModel, garden_path, point_mass_eos


def random_case(seed):
    """Small random model plus a random source for equivalence sweeps."""
    rng = RngStream(seed)
    params = make_params(seed, d_emb=2, d_hid=3, n_src=5, n_tgt=4,
                         scale=0.5 + rng.uniform())
    src_len = 1 + int(rng.integers(0, 3))
    source = [3 + int(rng.integers(0, 2)) for _ in range(src_len)]
    return params, source


class TestNoiseSchedule:
    def test_inverse_t_values(self):
        s = NoiseSchedule(0.3)
        assert s.sigma_at(1) == 0.3
        assert s.sigma_at(2) == pytest.approx(0.15)
        assert NoiseSchedule(0.0).sigma_at(7) == 0.0

    def test_strictly_decreasing(self):
        s = NoiseSchedule(0.5)
        sigmas = [s.sigma_at(t) for t in range(1, 20)]
        assert all(a > b for a, b in zip(sigmas, sigmas[1:]))

    def test_rejects_bad_args(self):
        with pytest.raises(ContractError):
            NoiseSchedule(-0.1)
        with pytest.raises(ContractError):
            NoiseSchedule(0.3).sigma_at(0)

    def test_scheduled_noise_std_tracks_schedule(self):
        # std of a sample std over n=20000 draws is sigma/sqrt(2n) ~ 0.5%
        schedule = NoiseSchedule(0.4)
        for t in (1, 2, 4):
            draws = np.concatenate([
                ScheduledNoise(RngStream(100 + i), schedule, 2000).vector(t)
                for i in range(10)])
            assert draws.std() == pytest.approx(0.4 / t, rel=0.05)

    def test_silent_noise_is_zero(self):
        n = SilentNoise(3)
        assert n.vector(1).tolist() == [0.0, 0.0, 0.0]
        assert n.vector(99).tolist() == [0.0, 0.0, 0.0]


def test_default_limits_follow_source_length():
    assert default_limits(4).max_len == 13
    with pytest.raises(ContractError):
        DecodeLimits(0)


class TestGreedy:
    def test_point_mass_stops_immediately(self):
        hyp = greedy_search(point_mass_eos(), limits=DecodeLimits(5))
        assert hyp.tokens == [TableModel.eos]
        assert hyp.logp == pytest.approx(0.0, abs=1e-12)
        assert hyp.complete

    def test_silent_noise_deterministic(self, tiny_params):
        a = greedy_decode(tiny_params, [3, 4])
        b = greedy_decode(tiny_params, [3, 4])
        assert a.tokens == b.tokens and a.logp == b.logp

    def test_hand_set_table_path(self):
        # stepwise argmax by hand: 0 (0.6), then EOS (0.5)
        hyp = greedy_search(garden_path(), limits=DecodeLimits(3))
        assert hyp.tokens == [0, TableModel.eos]
        assert hyp.logp == pytest.approx(math.log(0.6 * 0.5), abs=1e-12)

    def test_incomplete_flagged_at_max_len(self):
        never_eos = TableModel({}, default=[0.5, 0.5, 0.0])
        hyp = greedy_search(never_eos, limits=DecodeLimits(4))
        assert not hyp.complete
        assert len(hyp.tokens) == 4


class TestBeam:
    def test_k1_equals_greedy_thousand_cases(self):
        for seed in range(1000):
            params, source = random_case(seed)
            g = greedy_decode(params, source)
            b, _ = beam_decode(params, source, 1)
            assert g.tokens == b.tokens, f"seed {seed}"
            assert g.logp == b.logp
            assert g.complete == b.complete

    def test_huge_beam_matches_exact_oracle(self):
        for seed in range(30):
            params, source = random_case(seed)
            limits = DecodeLimits(3)
            e = exact_decode(params, source, limits)
            b, _ = beam_decode(params, source, 4 ** 3, limits=limits)
            assert b.tokens == e.tokens, f"seed {seed}"
            assert b.logp == e.logp

    def test_garden_path_beats_greedy(self):
        model = garden_path()
        limits = DecodeLimits(3)
        g = greedy_search(model, limits=limits)
        b, _ = beam_search(model, 2, limits=limits)
        assert b.logp > g.logp
        assert b.tokens == [1, TableModel.eos]
        assert b.logp == pytest.approx(math.log(0.39 * 0.98), abs=1e-12)
        # verified against full enumeration
        e = exact_search(model, limits)
        assert e.tokens == b.tokens and e.logp == b.logp

    def test_live_width_shrinks_as_hypotheses_complete(self):
        model = garden_path()
        _, completed = beam_search(model, 2, limits=DecodeLimits(3))
        assert len(completed) == 2
        assert sorted(h.tokens for h in completed) == [[0, 2], [1, 2]]

    def test_incomplete_beam_flagged(self):
        # width 2 over two always-viable tokens: EOS never enters the beam
        never_eos = TableModel({}, default=[0.5, 0.5, 0.0])
        best, completed = beam_search(never_eos, 2, limits=DecodeLimits(3))
        assert completed == []
        assert not best.complete

    def test_rejects_bad_width(self, tiny_params):
        with pytest.raises(ContractError):
            beam_decode(tiny_params, [3], 0)


class TestSample:
    def test_point_mass_always_same(self):
        model = point_mass_eos()
        for i in range(20):
            hyp = sample_search(model, RngStream(i), DecodeLimits(4))
            assert hyp.tokens == [TableModel.eos]

    def test_same_seed_same_sample(self, tiny_params):
        a = sample_decode(tiny_params, [3, 4], RngStream(5))
        b = sample_decode(tiny_params, [3, 4], RngStream(5))
        assert a.tokens == b.tokens and a.logp == b.logp

    def test_empirical_frequencies_match_enumeration(self):
        model = garden_path()
        limits = DecodeLimits(2)
        # enumerate the full outcome space of a 2-step decode by hand
        expected = {
            (2,): 0.01,
            (0, 2): 0.6 * 0.5, (1, 2): 0.39 * 0.98,
            (0, 0): 0.6 * 0.25, (0, 1): 0.6 * 0.25,
            (1, 0): 0.39 * 0.01, (1, 1): 0.39 * 0.01,
        }
        n = 100_000
        rng = RngStream(99)
        counts = {}
        for _ in range(n):
            hyp = sample_search(model, rng, limits)
            key = tuple(hyp.tokens)
            counts[key] = counts.get(key, 0) + 1
        assert sum(expected.values()) == pytest.approx(1.0, abs=1e-12)
        for key, p in expected.items():
            assert counts.get(key, 0) / n == pytest.approx(p, abs=0.01)


class TestDiverse:
    def test_eta_zero_identical_to_beam(self):
        for seed in range(200):
            params, source = random_case(seed)
            b_best, b_done = beam_decode(params, source, 3)
            d_best, d_done = diverse_beam_decode(params, source, 3, 0.0)
            assert d_best.tokens == b_best.tokens
            assert d_best.logp == b_best.logp
            assert [(h.tokens, h.logp) for h in d_done] == [(h.tokens, h.logp) for h in b_done]

    def test_k1_equals_greedy_for_any_eta(self):
        for seed in range(100):
            params, source = random_case(seed)
            g = greedy_decode(params, source)
            for eta in (0.001, 0.1, 1.0, 10.0):
                d, _ = diverse_beam_decode(params, source, 1, eta)
                assert d.tokens == g.tokens and d.logp == g.logp

    def test_large_eta_flips_second_slot_to_other_parent(self):
        # under parent [0]: EOS 0.4 (rank 1) vs token 0 0.38 (rank 2);
        # parent [1]'s best child EOS has 0.3*0.55; the flip needs
        # eta > ln(0.19/0.165) ~ 0.141
        rows = {
            (0, TableModel.bos): [0.5, 0.3, 0.2],
            (1, 0): [0.38, 0.22, 0.4],
            (1, 1): [0.25, 0.2, 0.55],
        }
        model = TableModel(rows)
        limits = DecodeLimits(2)
        # step 1 keeps parents [0] and [1] either way; the flip is at step 2
        _, small_eta = diverse_beam_search(model, 2, 0.001, limits=limits)
        assert sorted(h.tokens for h in small_eta) == [[0, 2]]
        _, large_eta = diverse_beam_search(model, 2, 1.0, limits=limits)
        assert sorted(h.tokens for h in large_eta) == [[0, 2], [1, 2]]
        flipped = [h for h in large_eta if h.tokens == [1, 2]][0]
        assert flipped.logp == pytest.approx(math.log(0.3) + math.log(0.55), abs=1e-12)

    def test_rejects_negative_eta(self, tiny_params):
        with pytest.raises(ContractError):
            diverse_beam_decode(tiny_params, [3], 2, -0.5)


class TestExact:
    def test_point_mass_forced_sequence(self):
        hyp = exact_search(point_mass_eos(), DecodeLimits(4))
        assert hyp.tokens == [TableModel.eos]

    def test_uniform_model_prefers_shortest(self, tiny_params):
        p = tiny_params.copy()
        p.tensors["out.W"][:] = 0.0
        p.tensors["out.b"][:] = 0.0
        hyp = exact_decode(p, [3], DecodeLimits(3))
        assert hyp.tokens == [EOS]
        assert hyp.logp == pytest.approx(-math.log(4), abs=1e-12)

    def test_dominates_other_decoders(self):
        # the chain e >= b >= g compares complete hypotheses only: an
        # unfinished prefix's logp is not a sequence probability
        chains_checked = 0
        for seed in range(40):
            params, source = random_case(seed)
            limits = DecodeLimits(3)
            e = exact_decode(params, source, limits)
            b, _ = beam_decode(params, source, 10, limits=limits)
            g = greedy_decode(params, source, limits=limits)
            assert e.complete
            if b.complete:
                assert e.logp >= b.logp
            if b.complete and g.complete:
                assert b.logp >= g.logp
                chains_checked += 1
            for hyp in (e, b, g):
                if hyp.complete:
                    assert score_sequence(params, source, hyp.tokens) == pytest.approx(hyp.logp, abs=1e-9)
        assert chains_checked >= 10, f"only {chains_checked} fully comparable cases"

    def test_matches_brute_force_scores(self, tiny_params):
        limits = DecodeLimits(3)
        source = [3, 4]
        best_logp, best_tokens = -np.inf, None
        others = [t for t in range(4) if t != EOS]
        for length in range(1, 4):
            for prefix in product(others, repeat=length - 1):
                tokens = list(prefix) + [EOS]
                lp = score_sequence(tiny_params, source, tokens)
                if lp > best_logp or (lp == best_logp and tokens < best_tokens):
                    best_logp, best_tokens = lp, tokens
        hyp = exact_decode(tiny_params, source, limits)
        assert hyp.tokens == best_tokens
        assert hyp.logp == pytest.approx(best_logp, abs=1e-12)

    def test_refuses_huge_spaces(self, tiny_params):
        with pytest.raises(SearchSpaceError):
            exact_decode(tiny_params, [3], DecodeLimits(15))


class TestReplaySoundness:
    def test_silent_decoders_replay_to_their_logp(self):
        for seed in range(100):
            params, source = random_case(seed)
            model = BoundModel(params, source)
            hyps = [greedy_search(model)]
            hyps.append(beam_search(model, 3)[0])
            hyps.append(diverse_beam_search(model, 3, 0.01)[0])
            hyps.append(sample_search(model, RngStream(seed)))
            for hyp in hyps:
                assert force_score(model, hyp.tokens) == pytest.approx(hyp.logp, abs=1e-9)

    def test_all_decoders_respect_max_len(self):
        never_eos = TableModel({}, default=[0.5, 0.5, 0.0])
        limits = DecodeLimits(3)
        assert len(greedy_search(never_eos, limits=limits).tokens) <= 3
        assert len(beam_search(never_eos, 2, limits=limits)[0].tokens) <= 3
        assert len(sample_search(never_eos, RngStream(0), limits).tokens) <= 3
        assert len(diverse_beam_search(never_eos, 2, 0.5, limits=limits)[0].tokens) <= 3
