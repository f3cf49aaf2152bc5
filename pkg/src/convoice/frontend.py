"""Audio frontend: WAV I/O, resampling, and the two log-mel representations.

Two fixed configurations are used throughout the engine:

* ``ENCODER_FRONTEND`` — 22050 Hz, 1024 FFT/window, 256 hop, 80 mels.
  Feeds the content encoder (after per-channel normalization with corpus
  statistics) and defines the decoder target / vocoder input.
* ``SPEAKER_FRONTEND`` — 16000 Hz, 25 ms window (400), 10 ms hop (160),
  512 FFT, 40 mels. Feeds the speaker encoder.

Spectrograms are natural-log magnitude with a 1e-5 floor. Mel filters are
unit-peak triangles with centers uniform on the HTK mel scale. STFT framing
is center-padded (reflect) so the frame count depends only on the hop:
``floor(n_samples / hop) + 1``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from functools import lru_cache
from math import gcd

import numpy as np
from scipy.signal import firwin, resample_poly

from .kernels import DomainError

__all__ = [
    "FormatError",
    "ConfigError",
    "FrontendConfig",
    "Waveform",
    "MelSpectrogram",
    "ENCODER_FRONTEND",
    "SPEAKER_FRONTEND",
    "load_wav",
    "save_wav",
    "decode_wav_bytes",
    "encode_wav_bytes",
    "resample",
    "stft",
    "frame_count",
    "hann_periodic",
    "mel_filterbank",
    "log_mel",
    "normalize_per_channel",
    "mel_to_linear",
]


class FormatError(ValueError):
    """Malformed or unsupported WAV content."""


class ConfigError(ValueError):
    """Inconsistent frontend configuration or config/data mismatch."""


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate_hz: int
    n_fft: int
    window_length: int
    hop_length: int
    n_mels: int
    fmin_hz: float
    fmax_hz: float
    log_floor: float = 1e-5

    def __post_init__(self):
        if min(self.sample_rate_hz, self.n_fft, self.window_length,
               self.hop_length, self.n_mels) < 1:
            raise ConfigError("all frontend sizes must be positive")
        if not (self.hop_length <= self.window_length <= self.n_fft):
            raise ConfigError(
                f"need hop <= window <= n_fft, got {self.hop_length}/"
                f"{self.window_length}/{self.n_fft}"
            )
        if not (0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2):
            raise ConfigError(
                f"need 0 <= fmin < fmax <= sr/2, got {self.fmin_hz}/{self.fmax_hz}"
            )
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


ENCODER_FRONTEND = FrontendConfig(22050, 1024, 1024, 256, 80, 0.0, 11025.0)
SPEAKER_FRONTEND = FrontendConfig(16000, 512, 400, 160, 40, 0.0, 8000.0)


@dataclass
class Waveform:
    """Mono PCM audio in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass
class MelSpectrogram:
    """(n_mels, frames) natural-log mel magnitudes plus the producing config."""

    values: np.ndarray
    config: FrontendConfig

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# WAV I/O (RIFF PCM-16 / IEEE float-32, mono or stereo)
# ---------------------------------------------------------------------------

def load_wav(path) -> Waveform:
    with open(path, "rb") as fh:
        return decode_wav_bytes(fh.read())


def decode_wav_bytes(raw: bytes) -> Waveform:
    if len(raw) < 12 or raw[:4] != b"RIFF":
        raise FormatError("bad magic: expected 'RIFF' chunk")
    if raw[8:12] != b"WAVE":
        raise FormatError("bad form type in 'RIFF' chunk: expected 'WAVE'")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"truncated '{cid.decode('ascii', 'replace')}' chunk")
        if cid == b"fmt ":
            if size < 16:
                raise FormatError("short 'fmt ' chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise FormatError("missing 'fmt ' chunk")
    if data is None:
        raise FormatError("missing 'data' chunk")
    codec, channels, rate, _, _, bits = fmt
    if channels < 1:
        raise FormatError("'fmt ' chunk declares zero channels")
    if codec == 1 and bits == 16:
        x = np.frombuffer(data[: len(data) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0
    elif codec == 3 and bits == 32:
        x = np.frombuffer(data[: len(data) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise FormatError(f"unsupported codec in 'fmt ' chunk: format={codec}, bits={bits}")
    if channels > 1:
        n = len(x) // channels
        x = x[: n * channels].reshape(n, channels).mean(axis=1)
    return Waveform(np.clip(x, -1.0, 1.0), int(rate))


def save_wav(path, wave: Waveform, fmt: str = "pcm16") -> None:
    with open(path, "wb") as fh:
        fh.write(encode_wav_bytes(wave, fmt))


def encode_wav_bytes(wave: Waveform, fmt: str = "pcm16") -> bytes:
    x = np.asarray(wave.samples, dtype=np.float64)
    if fmt == "pcm16":
        pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        payload = pcm.tobytes()
        codec, bits = 1, 16
    elif fmt == "float32":
        payload = x.astype("<f4").tobytes()
        codec, bits = 3, 32
    else:
        raise FormatError(f"unsupported save format {fmt!r}")
    block = bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, codec, 1, wave.sample_rate_hz, wave.sample_rate_hz * block, block, bits
    )
    header += b"data" + struct.pack("<I", len(payload))
    return header + payload


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

TAPS_PER_PHASE = 64
KAISER_BETA = 8.6


@lru_cache(maxsize=16)
def _resample_filter(up: int, down: int) -> np.ndarray:
    # prototype lowpass at the upsampled rate; 64 taps per polyphase branch
    return firwin(TAPS_PER_PHASE * up + 1, min(1.0 / up, 1.0 / down),
                  window=("kaiser", KAISER_BETA))


def resample(wave: Waveform, target_rate_hz: int) -> Waveform:
    """Polyphase windowed-sinc resampling (Kaiser beta 8.6, 64 taps/phase)."""
    if target_rate_hz < 1:
        raise ConfigError("target rate must be positive")
    if target_rate_hz == wave.sample_rate_hz:
        return Waveform(np.asarray(wave.samples).copy(), wave.sample_rate_hz)
    g = gcd(wave.sample_rate_hz, target_rate_hz)
    up, down = target_rate_hz // g, wave.sample_rate_hz // g
    n = len(wave.samples)
    out = resample_poly(np.asarray(wave.samples, dtype=np.float64), up, down,
                        window=_resample_filter(up, down))
    n_out = int(np.floor(n * up / down + 0.5))
    out = out[:n_out]
    return Waveform(np.clip(out, -1.0, 1.0), target_rate_hz)


# ---------------------------------------------------------------------------
# STFT and mel features
# ---------------------------------------------------------------------------

def hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, hop_length: int) -> int:
    return n_samples // hop_length + 1


@lru_cache(maxsize=8)
def _padded_window(window_length: int, n_fft: int) -> np.ndarray:
    w = hann_periodic(window_length)
    if window_length == n_fft:
        return w
    lpad = (n_fft - window_length) // 2
    out = np.zeros(n_fft)
    out[lpad : lpad + window_length] = w
    return out


def stft(samples, config: FrontendConfig) -> np.ndarray:
    """Center-padded STFT; returns complex (n_fft/2 + 1, frames).

    Frame t covers samples [t*hop - n_fft/2, t*hop + n_fft/2) of the input,
    with reflect padding supplying the out-of-range part.
    """
    x = np.asarray(samples, dtype=np.float64)
    n = len(x)
    half = config.n_fft // 2
    xp = np.pad(x, half, mode="reflect")
    t_frames = frame_count(n, config.hop_length)
    (stride,) = xp.strides
    frames = np.lib.stride_tricks.as_strided(
        xp,
        shape=(t_frames, config.n_fft),
        strides=(stride * config.hop_length, stride),
        writeable=False,
    )
    win = _padded_window(config.window_length, config.n_fft)
    return np.fft.rfft(frames * win, n=config.n_fft, axis=1).T


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(config: FrontendConfig) -> np.ndarray:
    """Unit-peak triangular filters, HTK mel scale, shape (n_mels, n_fft/2+1)."""
    edges = _mel_to_hz(
        np.linspace(_hz_to_mel(config.fmin_hz), _hz_to_mel(config.fmax_hz), config.n_mels + 2)
    )
    bin_freqs = np.arange(config.n_bins) * config.sample_rate_hz / config.n_fft
    fb = np.zeros((config.n_mels, config.n_bins))
    for i in range(config.n_mels):
        left, center, right = edges[i], edges[i + 1], edges[i + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
        if not fb[i].any():
            raise ConfigError(
                f"mel filter {i} has empty support: n_mels={config.n_mels} is too "
                f"large for n_fft={config.n_fft} at {config.sample_rate_hz} Hz"
            )
    return fb


def log_mel(wave: Waveform, config: FrontendConfig) -> MelSpectrogram:
    """Natural-log mel magnitude spectrogram, floored at config.log_floor."""
    if wave.sample_rate_hz != config.sample_rate_hz:
        raise ConfigError(
            f"waveform rate {wave.sample_rate_hz} != config rate "
            f"{config.sample_rate_hz}; resample first"
        )
    mag = np.abs(stft(wave.samples, config))
    mel = mel_filterbank(config) @ mag
    return MelSpectrogram(np.log(np.maximum(mel, config.log_floor)), config)


def normalize_per_channel(mel: MelSpectrogram, mean, std) -> MelSpectrogram:
    """Normalize each mel channel with externally supplied (corpus) statistics."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    n = mel.values.shape[0]
    if mean.shape != (n,) or std.shape != (n,):
        raise ConfigError(f"stats must have shape ({n},), got {mean.shape}/{std.shape}")
    if np.any(std <= 0):
        raise DomainError("per-channel std must be strictly positive")
    return MelSpectrogram((mel.values - mean[:, None]) / std[:, None], mel.config)


def mel_to_linear(mel: MelSpectrogram) -> np.ndarray:
    """Approximate magnitude spectrogram via the filterbank pseudo-inverse."""
    mag = _filterbank_pinv(mel.config) @ np.exp(mel.values)
    return np.clip(mag, 0.0, None)


@lru_cache(maxsize=8)
def _filterbank_pinv(config: FrontendConfig) -> np.ndarray:
    return np.linalg.pinv(mel_filterbank(config))
