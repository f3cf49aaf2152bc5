"""Latency / real-time-factor benchmark for the encoder+decoder forward pass.

Timing covers the model core only (encode, condition, decode); the mel
frontend runs beforehand and the vocoder is excluded entirely, matching how
the architecture's latency is specified. Batches pad shorter mels to the
longest member with the log floor and crop per sample after decoding.

Kernels run single-threaded by default for measurement stability; pass
``threads`` (or set CONVOICE_THREADS for the CLI) to change that. RTF is
``batch_size * mean_audio_duration_s / mean_latency_s``.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .frontend import Waveform, load_wav, log_mel, normalize_per_channel, resample
from .pipeline import ConversionEngine, PipelineError

__all__ = ["BenchReport", "bench", "load_corpus"]


@dataclass
class BenchReport:
    batch_size: int
    mean_latency_s: float
    latency_std_s: float
    rtf: float
    n_samples: int
    mean_audio_duration_s: float
    threads: int

    def to_dict(self) -> dict:
        return asdict(self)


def load_corpus(wav_dir) -> list:
    paths = sorted(Path(wav_dir).glob("*.wav"))
    if not paths:
        raise PipelineError("bench", f"no WAV files in {wav_dir}")
    return [load_wav(p) for p in paths]


def bench(bundle, corpus, batch_sizes, warmup: int = 3, reps: int = 20,
          threads: int = 1, seed: int = 0) -> list:
    """Time encoder+decoder over a corpus; one report per batch size."""
    if isinstance(corpus, (str, Path)):
        corpus = load_corpus(corpus)
    if not corpus:
        raise PipelineError("bench", "empty corpus")
    if reps < 1:
        raise PipelineError("bench", "reps must be >= 1")

    engine = ConversionEngine(bundle)
    fe = bundle.encoder_frontend
    floor = np.log(fe.log_floor)

    mels = []
    durations = []
    for wave in corpus:
        wave = resample(wave, fe.sample_rate_hz)
        raw = log_mel(wave, fe)
        mels.append(raw.values)
        durations.append(wave.duration_s)

    rng = np.random.default_rng(seed)
    spk = rng.standard_normal(bundle.speaker_config.embed_dim)
    spk = (spk / np.linalg.norm(spk)).astype(engine.dtype)

    reports = []
    for batch_size in batch_sizes:
        idx = [i % len(mels) for i in range(batch_size)]
        t_max = max(mels[i].shape[1] for i in idx)
        batch = np.full((batch_size, fe.n_mels, t_max), floor)
        for row, i in enumerate(idx):
            batch[row, :, : mels[i].shape[1]] = mels[i]
        norm = (batch - np.asarray(bundle.mel_mean)[:, None]) / np.asarray(bundle.mel_std)[:, None]
        norm = np.ascontiguousarray(norm, dtype=engine.dtype)
        frame_counts = [mels[i].shape[1] for i in idx]

        def run_once():
            pred = engine.predict_mel(norm, spk)
            return [pred[row, :, : frame_counts[row]] for row in range(batch_size)]

        with threadpool_limits(limits=threads):
            for _ in range(warmup):
                run_once()
            samples = np.empty(reps)
            for r in range(reps):
                t0 = time.perf_counter()
                run_once()
                samples[r] = time.perf_counter() - t0

        mean_latency = float(samples.mean())
        if mean_latency <= 0:
            raise PipelineError("bench", "mean latency is not positive; clock too coarse")
        mean_duration = float(np.mean([durations[i] for i in idx]))
        reports.append(
            BenchReport(
                batch_size=int(batch_size),
                mean_latency_s=mean_latency,
                latency_std_s=float(samples.std()),
                rtf=batch_size * mean_duration / mean_latency,
                n_samples=int(batch_size * reps),
                mean_audio_duration_s=mean_duration,
                threads=int(threads),
            )
        )
    return reports
