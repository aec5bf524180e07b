import numpy as np
import pytest
from scipy import stats as sps

from rhmlab import (
    ImpossibleEvidenceError,
    NoiseSpec,
    bp_marginals,
    bp_posterior_sample,
    bp_posterior_sample_batch,
    corrupt,
    denoise_expectation,
    leaf_likelihoods,
    parse,
    parse_batch,
    sample_dataset,
)
from oracles import enumeration_conditionals


def _assert_matches_oracle(rs, lik, tol=1e-9):
    state = bp_marginals(rs, lik)
    want, logz = enumeration_conditionals(rs, lik)
    for lvl in range(rs.params.depth + 1):
        assert np.abs(state.marginals[lvl] - want[lvl]).max() <= tol
    assert abs(state.log_evidence - logz) <= 1e-9
    return state


class TestMarginals:
    def test_uninformative_leaves_give_prior(self, rs_small):
        _assert_matches_oracle(rs_small, np.ones((4, 4)))

    def test_clean_sample_is_point_mass(self, rs_small):
        ds = sample_dataset(rs_small, 5, np.random.default_rng(0))
        for row in range(5):
            lik = np.eye(4)[ds.sequences[row]]
            state = bp_marginals(rs_small, lik)
            for lvl in range(3):
                want = np.eye(4)[ds.level_symbols(lvl)[row]]
                assert np.abs(state.marginals[lvl] - want).max() < 1e-12

    def test_single_masked_leaf_matches_conditional(self, rs_small):
        ds = sample_dataset(rs_small, 3, np.random.default_rng(1))
        for row in range(3):
            lik = np.eye(4)[ds.sequences[row]]
            lik[0] = 1.0  # mask exactly the first leaf
            _assert_matches_oracle(rs_small, lik)

    def test_all_masking_patterns(self, rs_small):
        ds = sample_dataset(rs_small, 1, np.random.default_rng(2))
        x = ds.sequences[0]
        for pattern in range(16):
            lik = np.eye(4)[x]
            for i in range(4):
                if pattern >> i & 1:
                    lik[i] = 1.0
            _assert_matches_oracle(rs_small, lik)

    def test_random_likelihoods_deep(self, rs_deep):
        rng = np.random.default_rng(3)
        for _ in range(25):
            lik = rng.random((8, 3)) + 1e-4
            _assert_matches_oracle(rs_deep, lik)

    def test_normalization(self, rs_deep):
        rng = np.random.default_rng(4)
        lik = rng.random((8, 3))
        state = bp_marginals(rs_deep, lik)
        for lvl in range(4):
            assert np.abs(state.marginals[lvl].sum(axis=1) - 1).max() < 1e-12

    def test_scaling_invariance(self, rs_small):
        rng = np.random.default_rng(5)
        lik = rng.random((4, 4)) + 0.1
        base = bp_marginals(rs_small, lik)
        scaled = lik.copy()
        scaled[2] *= 731.0
        state = bp_marginals(rs_small, scaled)
        for lvl in range(3):
            assert np.abs(state.marginals[lvl] - base.marginals[lvl]).max() < 1e-12
        # evidence picks up exactly the scale factor
        assert state.log_evidence - base.log_evidence == pytest.approx(np.log(731.0))

    def test_impossible_evidence_raises(self, rs_small):
        lik = np.ones((4, 4))
        lik[1] = 0.0
        with pytest.raises(ImpossibleEvidenceError):
            bp_marginals(rs_small, lik)
        # structurally impossible: two clean tuples that parse nowhere
        inv = rs_small.inverse_at(1)
        bad_code = int(np.flatnonzero(inv < 0)[0])
        seq = np.array([bad_code // 4, bad_code % 4, 0, 0])
        lik = np.eye(4)[seq]
        lik[2:] = 1.0
        with pytest.raises(ImpossibleEvidenceError):
            bp_marginals(rs_small, lik)

    def test_rejects_negative_or_misshaped(self, rs_small):
        with pytest.raises(ValueError):
            bp_marginals(rs_small, -np.ones((4, 4)))
        with pytest.raises(ValueError):
            bp_marginals(rs_small, np.ones((3, 4)))


class TestPosteriorSampling:
    def test_all_masked_matches_prior_chi_square(self, rs_small):
        n = 120_000
        seqs = bp_posterior_sample_batch(
            rs_small, np.ones((4, 4)), n, np.random.default_rng(6)
        )
        codes = seqs @ (4 ** np.arange(3, -1, -1))
        counts = np.bincount(codes, minlength=256)
        counts = counts[counts > 0]
        assert counts.size == 32
        _, pvalue = sps.chisquare(counts)
        assert pvalue > 1e-4

    def test_clean_input_returns_unique_parse(self, rs_small):
        ds = sample_dataset(rs_small, 4, np.random.default_rng(7))
        for row in range(4):
            lik = np.eye(4)[ds.sequences[row]]
            deriv = bp_posterior_sample(rs_small, lik, np.random.default_rng(row))
            assert np.array_equal(deriv.tokens, ds.sequences[row])
            want = parse(rs_small, ds.sequences[row])
            for lvl in range(3):
                assert np.array_equal(deriv.levels[lvl], want.levels[lvl])

    def test_sample_marginals_match_bp_at_every_node(self, rs_small):
        rng = np.random.default_rng(8)
        lik = rng.random((4, 4)) + 0.05
        state = bp_marginals(rs_small, lik)
        n = 60_000
        draws = bp_posterior_sample_batch(rs_small, lik, n, rng)
        # unambiguity: parsing the sampled strings recovers their latents
        _, latents, _ = parse_batch(rs_small, draws)
        per_level = [draws] + latents
        for lvl in range(3):
            for pos in range(per_level[lvl].shape[1]):
                freq = np.bincount(per_level[lvl][:, pos], minlength=4) / n
                p = state.marginals[lvl][pos]
                se = np.sqrt(p * (1 - p) / n) + 1e-9
                assert np.all(np.abs(freq - p) < 4 * se)

    def test_sampled_derivations_are_grammatical(self, rs_deep):
        rng = np.random.default_rng(9)
        lik = rng.random((8, 3)) + 0.05
        for _ in range(20):
            deriv = bp_posterior_sample(rs_deep, lik, rng)
            assert deriv.is_consistent(rs_deep)
            assert parse(rs_deep, deriv.tokens).max_valid_level == 3


class TestDenoiseExpectation:
    def test_no_noise_is_one_hot(self, rs_small):
        ds = sample_dataset(rs_small, 2, np.random.default_rng(10))
        spec = NoiseSpec(kind="uniform", beta_bar=0.0)
        out = denoise_expectation(rs_small, ds.sequences[0], spec)
        assert np.abs(out - np.eye(4)[ds.sequences[0]]).max() < 1e-12

    def test_full_masking_is_prior(self, rs_small):
        spec = NoiseSpec(kind="masking", beta_bar=1.0)
        out = denoise_expectation(rs_small, np.full(4, 4), spec)
        prior, _ = enumeration_conditionals(rs_small, np.ones((4, 4)))
        assert np.abs(out - prior[0]).max() < 1e-9

    def test_partial_masking_matches_enumeration(self, rs_small):
        rng = np.random.default_rng(11)
        spec = NoiseSpec(kind="masking", beta_bar=0.5)
        ds = sample_dataset(rs_small, 10, rng)
        for row in range(10):
            noisy, _ = corrupt(ds.sequences[row], spec, 4, rng)
            lik = leaf_likelihoods(noisy, spec, 4)
            out = denoise_expectation(rs_small, noisy, spec)
            want, _ = enumeration_conditionals(rs_small, lik)
            assert np.abs(out - want[0]).max() <= 1e-9

    def test_uniform_noise_matches_enumeration(self, rs_deep):
        rng = np.random.default_rng(12)
        spec = NoiseSpec(kind="uniform", beta_bar=0.6)
        ds = sample_dataset(rs_deep, 5, rng)
        for row in range(5):
            noisy, _ = corrupt(ds.sequences[row], spec, 3, rng)
            out = denoise_expectation(rs_deep, noisy, spec)
            want, _ = enumeration_conditionals(
                rs_deep, leaf_likelihoods(noisy, spec, 3)
            )
            assert np.abs(out - want[0]).max() <= 1e-9
