import numpy as np
import pytest
from hypothesis import given, strategies as st

from anonflow.errors import EmptyVoicedError, InputError
from anonflow.pitch import normalize_pitch, pitch_or_zeros
from anonflow.vq import Codebook, QuantizeResult, codebook_grad, quantize


class TestNormalizePitch:
    def test_reference_pitch_all_zero(self):
        np_out = normalize_pitch([440.0, 440.0, 440.0])
        assert np.array_equal(np_out.p_norm, [0, 0, 0])

    def test_octave_arithmetic(self):
        out = normalize_pitch([220.0, 440.0, 880.0])
        assert np.allclose(out.p_norm, [-12, 0, 12])
        assert np.array_equal(out.p_norm, [-12, 0, 12])

    def test_unvoiced_masking_rule(self):
        # voiced semitones [0, 12, 12], median 12; unvoiced third frame -> 0
        out = normalize_pitch([440.0, 880.0, 0.0, 880.0])
        assert np.allclose(out.p_norm, [-12, 0, 0, 0])
        assert list(out.voiced_mask) == [True, True, False, True]

    def test_all_unvoiced_rejected(self):
        with pytest.raises(EmptyVoicedError):
            normalize_pitch([0.0, 0.0])

    def test_negative_f0_rejected(self):
        with pytest.raises(InputError):
            normalize_pitch([-1.0, 440.0])

    def test_pitch_or_zeros_fallback(self):
        assert np.array_equal(pitch_or_zeros([0.0, 0.0, 0.0]), [0, 0, 0])

    def test_voiced_median_exactly_zero_random(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(2, 40))
            f0 = rng.uniform(80, 500, n)
            f0[rng.random(n) < 0.3] = 0.0
            if not np.any(f0 > 0):
                f0[0] = 200.0
            out = normalize_pitch(f0)
            assert np.median(out.p_norm[out.voiced_mask]) == 0.0
            assert np.all(out.p_norm[~out.voiced_mask] == 0.0)

    @given(st.lists(st.floats(50, 1000), min_size=1, max_size=20))
    def test_median_zero_property(self, f0):
        out = normalize_pitch(f0)
        assert np.median(out.p_norm) == 0.0


class TestQuantize:
    def _book(self):
        return Codebook(entries=np.array([[0.0, 0.0], [1.0, 1.0]]), beta=0.25)

    def test_exact_codeword_hit(self):
        entries = np.random.default_rng(0).standard_normal((8, 3))
        book = Codebook(entries=entries)
        res = quantize(entries[5][None, :], book)
        assert res.indices[0] == 5
        assert np.array_equal(res.c_vq[0], entries[5])
        assert res.commit_loss == 0.0

    def test_nearest_neighbor(self):
        book = self._book()
        res = quantize(np.array([[0.4, 0.4], [0.6, 0.6]]), book)
        assert list(res.indices) == [0, 1]

    def test_tie_breaks_to_lowest_index(self):
        entries = np.zeros((8, 2))
        entries[2] = [1.0, 0.0]
        entries[7] = [-1.0, 0.0]
        # shift others away so only 2 and 7 are candidates
        for i in (0, 1, 3, 4, 5, 6):
            entries[i] = [0.0, 10.0 + i]
        book = Codebook(entries=entries)
        res = quantize(np.array([[0.0, 0.0]]), book)
        assert res.indices[0] == 2

    def test_empty_input_rejected(self):
        with pytest.raises(InputError):
            quantize(np.empty((0, 2)), self._book())

    def test_dim_mismatch_rejected(self):
        with pytest.raises(InputError):
            quantize(np.zeros((1, 3)), self._book())

    def test_commit_loss_two_term_value(self):
        book = self._book()
        f = np.array([[0.4, 0.4]])
        res = quantize(f, book)
        mse = np.mean((f - res.c_vq) ** 2)
        assert res.commit_loss == pytest.approx((1 + 0.25) * mse)

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(3)
        book = Codebook(entries=rng.standard_normal((6, 4)))
        f = rng.standard_normal((10, 4))
        perm = rng.permutation(10)
        r1 = quantize(f, book)
        r2 = quantize(f[perm], book)
        assert np.array_equal(r1.indices[perm], r2.indices)

    def test_codebook_grad_pulls_toward_features(self):
        book = self._book()
        f = np.array([[0.4, 0.4]])
        res = quantize(f, book)
        g = codebook_grad(f, res, book)
        # assigned codeword 0 moves toward f: gradient points from f to c
        assert np.all(g[0] < 0)
        assert np.array_equal(g[1], [0, 0])

    def test_codebook_grad_matches_finite_difference(self):
        rng = np.random.default_rng(9)
        entries = rng.standard_normal((5, 3))
        f = rng.standard_normal((12, 3))
        book = Codebook(entries=entries.copy(), beta=0.25)
        res = quantize(f, book)
        g = codebook_grad(f, res, book)
        h = 1e-6
        for k in range(5):
            for e in range(3):
                book.entries[k, e] += h
                # keep assignments frozen, as stopgrad dictates
                cv = book.entries[res.indices]
                lp = 0.25 * np.mean((f - cv) ** 2)
                book.entries[k, e] -= 2 * h
                cv = book.entries[res.indices]
                lm = 0.25 * np.mean((f - cv) ** 2)
                book.entries[k, e] += h
                fd = (lp - lm) / (2 * h)
                assert g[k, e] == pytest.approx(fd, abs=1e-6)
