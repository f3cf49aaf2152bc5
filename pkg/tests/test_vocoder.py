"""Vocoder tests: iSTFT inversion, Griffin-Lim convergence and contracts."""

import numpy as np
import pytest

from convoice.frontend import (
    ENCODER_FRONTEND,
    ConfigError,
    MelSpectrogram,
    SPEAKER_FRONTEND,
    Waveform,
    log_mel,
    mel_to_linear,
    stft,
)
from convoice.vocoder import GriffinLimConfig, istft, spectral_convergence_db, synthesize


def harmonic_wave(seconds=2.0, sr=22050, f0=160.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * sr)) / sr
    x = sum(0.3 / k * np.sin(2 * np.pi * f0 * k * t + rng.uniform(0, 2 * np.pi))
            for k in range(1, 10))
    return Waveform(0.8 * x / np.abs(x).max(), sr)


class TestIstft:
    def test_round_trip_identity(self):
        rng = np.random.default_rng(0)
        for seed in range(3):
            x = np.random.default_rng(seed).standard_normal(22050) * 0.3
            spec = stft(x, ENCODER_FRONTEND)
            back = istft(spec, ENCODER_FRONTEND, length=len(x))
            np.testing.assert_allclose(back, x, atol=1e-6)
        del rng

    def test_round_trip_short_window_config(self):
        x = np.random.default_rng(1).standard_normal(16000) * 0.3
        spec = stft(x, SPEAKER_FRONTEND)
        back = istft(spec, SPEAKER_FRONTEND, length=len(x))
        np.testing.assert_allclose(back, x, atol=1e-6)

    def test_zero_spectrogram(self):
        spec = np.zeros((513, 20), dtype=np.complex128)
        assert not istft(spec, ENCODER_FRONTEND).any()

    def test_linearity(self):
        x = np.random.default_rng(2).standard_normal(8192) * 0.2
        spec = stft(x, ENCODER_FRONTEND)
        a = istft(3.0 * spec, ENCODER_FRONTEND)
        b = 3.0 * istft(spec, ENCODER_FRONTEND)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_bad_shape(self):
        with pytest.raises(ConfigError):
            istft(np.zeros((100, 5), dtype=complex), ENCODER_FRONTEND)


class TestSynthesize:
    def test_all_floor_mel_is_near_silent(self):
        mel = MelSpectrogram(np.full((80, 30), np.log(1e-5)), ENCODER_FRONTEND)
        wave = synthesize(mel, GriffinLimConfig(n_iters=5))
        assert np.abs(wave.samples).max() < 1e-3

    def test_output_length_contract(self):
        for frames in (1, 30, 117):
            mel = MelSpectrogram(np.full((80, frames), np.log(1e-5)), ENCODER_FRONTEND)
            wave = synthesize(mel, GriffinLimConfig(n_iters=2))
            assert len(wave.samples) == frames * 256

    def test_spectral_snr_after_60_iters(self):
        mel = log_mel(harmonic_wave(), ENCODER_FRONTEND)
        wave = synthesize(mel, GriffinLimConfig(n_iters=60, momentum=0.99))
        target = mel_to_linear(mel)
        rebuilt = np.abs(stft(wave.samples, ENCODER_FRONTEND))[:, : target.shape[1]]
        # peak limiting rescales the waveform; compare in a scale-free way
        scale = np.linalg.norm(rebuilt) / np.linalg.norm(target)
        snr = spectral_convergence_db(rebuilt / scale, target)
        assert snr >= 10.0

    def test_monotone_convergence_without_momentum(self):
        for seed in range(5):
            mel = log_mel(harmonic_wave(seconds=0.7, f0=120 + 40 * seed, seed=seed),
                          ENCODER_FRONTEND)
            _, trace = synthesize(mel, GriffinLimConfig(n_iters=25, momentum=0.0),
                                  return_trace=True)
            trace = np.asarray(trace)
            assert (trace[1:] <= trace[:-1] + 1e-9 * trace[0]).all()

    def test_deterministic(self):
        mel = log_mel(harmonic_wave(seconds=0.5), ENCODER_FRONTEND)
        a = synthesize(mel, GriffinLimConfig(n_iters=8))
        b = synthesize(mel, GriffinLimConfig(n_iters=8))
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_peak_limited(self):
        mel = log_mel(harmonic_wave(seconds=0.5), ENCODER_FRONTEND)
        loud = MelSpectrogram(mel.values + 3.0, mel.config)
        wave = synthesize(loud, GriffinLimConfig(n_iters=5))
        assert np.abs(wave.samples).max() <= 1.0

    def test_config_mismatch_rejected(self):
        mel = MelSpectrogram(np.zeros((40, 10)), SPEAKER_FRONTEND)
        with pytest.raises(ConfigError):
            synthesize(mel, GriffinLimConfig(n_iters=1))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            GriffinLimConfig(n_iters=0)
        with pytest.raises(ConfigError):
            GriffinLimConfig(momentum=1.0)
