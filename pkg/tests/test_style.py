import numpy as np
import pytest
import torch

from keyecho.audio import Waveform
from keyecho.features import mel_filterbank, log_mel
from keyecho.ksn import spectral_l1_loss
from keyecho.style import (DECAY_REF_S, GAMMA_RANGE, IIR_ORDER_CHOICES,
                           StyleParams, apply_style, apply_style_batch,
                           decay_perturb, iir_impulse_response, mel_warp,
                           neutral_style, random_iir, sample_style,
                           sos_pole_magnitudes)

SR = 16000


def _impulse_like(n=1600, seed=0):
    """Keystroke-ish test signal: click plus damped tones."""
    rng = np.random.default_rng(seed)
    t = np.arange(n) / SR
    x = np.zeros(n)
    x[:48] += rng.standard_normal(48) * np.hanning(48)
    for f, tau in ((800.0, 0.008), (2300.0, 0.012), (4100.0, 0.006)):
        x += 0.5 * np.sin(2 * np.pi * f * t) * np.exp(-t / tau)
    return Waveform(x, SR)


class TestSampleStyle:
    def test_deterministic(self):
        assert sample_style(42) == sample_style(42)

    def test_draws_cover_ranges(self):
        gammas = np.array([sample_style(i).gamma for i in range(10_000)])
        assert gammas.min() >= GAMMA_RANGE[0]
        assert gammas.max() <= GAMMA_RANGE[1]
        span = GAMMA_RANGE[1] - GAMMA_RANGE[0]
        covered = (gammas.max() - gammas.min()) / span
        assert covered >= 0.95

    def test_order_histogram(self):
        orders = np.array([sample_style(i).iir_order for i in range(10_000)])
        for order in IIR_ORDER_CHOICES:
            assert (orders == order).mean() >= 0.15

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            StyleParams(iir_order=7, q_factors=(0.5,) * 3,
                        center_freqs_hz=(1000.0,) * 3, gains_db=(0.0,) * 3,
                        mel_shift=0.0, gamma=1.0, seed=0)
        with pytest.raises(ValueError):
            StyleParams(iir_order=6, q_factors=(2.0, 0.5, 0.5),
                        center_freqs_hz=(1000.0,) * 3, gains_db=(0.0,) * 3,
                        mel_shift=0.0, gamma=1.0, seed=0)


class TestRandomIir:
    def test_poles_inside_unit_circle(self):
        for seed in range(500):
            sos = random_iir(sample_style(seed), SR)
            assert sos_pole_magnitudes(sos).max() < 1.0

    def test_dc_gain_unity(self):
        for seed in range(20):
            sos = random_iir(sample_style(seed), SR)
            for section in sos:
                b, a = section[:3], section[3:]
                assert b.sum() / a.sum() == pytest.approx(1.0, abs=1e-9)

    def test_impulse_response_decays(self):
        for seed in range(50):
            ir = iir_impulse_response(random_iir(sample_style(seed), SR), SR)
            energy = ir ** 2
            total = energy.sum()
            tail = energy[-len(ir) // 10:].sum()
            assert np.isfinite(total)
            assert tail < 0.01 * total

    def test_low_q_wider_bandwidth(self):
        from scipy import signal as sps

        def deviation_width(q):
            params = StyleParams(iir_order=6, q_factors=(q, q, q),
                                 center_freqs_hz=(2000.0,) * 3,
                                 gains_db=(4.0,) * 3, mel_shift=0.0,
                                 gamma=1.0, seed=0)
            sos = random_iir(params, SR)
            w, h = sps.sosfreqz(sos, worN=4096, fs=SR)
            gain_db = 20 * np.log10(np.abs(h) + 1e-12)
            half = gain_db.max() / 2
            return (gain_db >= half).sum()

        assert deviation_width(0.4) > deviation_width(1.2)


class TestMelWarp:
    def test_zero_shift_identity(self):
        x = _impulse_like()
        out = mel_warp(x, 0.0)
        err = np.linalg.norm(out.samples - x.samples) / np.linalg.norm(x.samples)
        assert err < 1e-4

    def test_out_of_range_shift_rejected(self):
        with pytest.raises(ValueError):
            mel_warp(_impulse_like(), 0.2)

    @pytest.mark.parametrize("bin_index", [12, 18])
    def test_tone_moves_up_in_mel(self, bin_index):
        win = int(round(25.0 * SR / 1000))
        _, centers = mel_filterbank(SR, win, 40)
        f = centers[bin_index]
        t = np.arange(SR) / SR
        tone = Waveform(0.5 * np.sin(2 * np.pi * f * t), SR)
        warped = mel_warp(tone, 0.12)
        spec = log_mel(warped, mel_bins=40)
        moved = int(np.argmax(spec.values.mean(axis=1)))
        assert abs(moved - round(bin_index * 1.12)) <= 1

    @pytest.mark.parametrize("s", [0.03, 0.06, 0.12])
    def test_round_trip(self, s):
        # +s then -s recovers the original within 2% spectral L1 (relative,
        # linear magnitudes). Needs a smooth-spectrum signal: sharp spectral
        # peaks are intrinsically lossy under interpolation-based warping.
        n = 1600
        t = np.arange(n) / SR
        x = np.zeros(n)
        for f, t0, sig in ((1500.0, 0.010, 0.0012), (3200.0, 0.012, 0.0009)):
            x += np.cos(2 * np.pi * f * (t - t0)) * np.exp(
                -0.5 * ((t - t0) / sig) ** 2)
        wav = Waveform(x, SR)
        back = mel_warp(mel_warp(wav, s), -s)
        a = np.abs(np.fft.rfft(back.samples))
        b = np.abs(np.fft.rfft(wav.samples))
        assert np.abs(a - b).sum() / np.abs(b).sum() < 0.02


class TestDecayPerturb:
    def test_gamma_one_exact_identity(self):
        x = _impulse_like()
        out = decay_perturb(x, 1.0)
        np.testing.assert_array_equal(out.samples, x.samples)

    def test_closed_form_gain(self):
        n = int(SR * DECAY_REF_S)  # sample at t = 50 ms
        x = Waveform(np.ones(n + 1), SR)
        out = decay_perturb(x, 1.15)
        assert out.samples[n] == pytest.approx(np.exp(0.15), rel=1e-9)

    def test_decay_below_one(self):
        x = Waveform(np.ones(3200), SR)
        out = decay_perturb(x, 0.85)
        assert np.all(np.diff(out.samples) < 0)
        assert np.sum(out.samples ** 2) < np.sum(x.samples ** 2)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            decay_perturb(_impulse_like(), 0.5)


class TestApplyStyle:
    def test_neutral_params_identity(self):
        x = _impulse_like()
        out = apply_style(x, neutral_style())
        err = np.max(np.abs(out.samples - x.samples))
        assert err < 1e-6

    def test_length_preserved(self):
        x = _impulse_like()
        for seed in range(5):
            assert len(apply_style(x, sample_style(seed))) == len(x)

    def test_rms_envelope_bounded(self):
        x = _impulse_like()
        in_rms = np.sqrt(np.mean(x.samples ** 2))
        ratios = []
        for seed in range(1000):
            out = apply_style(x, sample_style(seed))
            ratios.append(np.sqrt(np.mean(out.samples ** 2)) / in_rms)
        ratios = np.array(ratios)
        assert ratios.min() >= 0.3
        assert ratios.max() <= 3.0

    def test_distinct_seeds_distinct_outputs(self):
        x = _impulse_like()
        a = apply_style(x, sample_style(1)).samples
        b = apply_style(x, sample_style(2)).samples
        assert np.linalg.norm(a - b) > 1e-3 * np.linalg.norm(x.samples)

    def test_pure_function(self):
        x = _impulse_like()
        params = sample_style(7)
        one = apply_style(x, params).samples
        two = apply_style(x, params).samples
        np.testing.assert_array_equal(one, two)

    def test_batch_matches_single(self):
        x = _impulse_like()
        styles = [sample_style(i) for i in range(4)]
        batch = torch.as_tensor(
            np.stack([x.samples] * 4), dtype=torch.float64)
        out = apply_style_batch(batch, styles, SR).numpy()
        for i, params in enumerate(styles):
            single = apply_style(x, params).samples
            np.testing.assert_allclose(out[i], single, atol=1e-8)
