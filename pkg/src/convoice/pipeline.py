"""End-to-end conversion pipeline wiring the four networks together.

``ConversionEngine`` owns a read-only bundle with batchnorm-folded networks
and serves any number of conversions; ``convert`` is the one-shot helper.
Errors from any stage are wrapped in ``PipelineError`` with the stage name.

The frame-by-frame contract holds end to end: the predicted mel has exactly
one frame per source mel frame, and the synthesized waveform has exactly
``frames * hop`` samples.
"""

from __future__ import annotations

import numpy as np

from .checkpoint import ModelBundle
from .content_encoder import (
    ContentEncoder,
    EncoderConfig,
    FULL_ENCODER_CONFIG,
    TOY_ENCODER_CONFIG,
)
from .decoder import (
    Decoder,
    DecoderConfig,
    FULL_DECODER_CONFIG,
    TOY_DECODER_CONFIG,
    condition,
)
from .frontend import (
    ENCODER_FRONTEND,
    MelSpectrogram,
    SPEAKER_FRONTEND,
    Waveform,
    log_mel,
    normalize_per_channel,
    resample,
)
from .speaker_encoder import (
    FULL_SPEAKER_CONFIG,
    SpeakerConfig,
    SpeakerEncoder,
    TOY_SPEAKER_CONFIG,
    mean_embedding,
)
from .vocoder import GriffinLimConfig, synthesize

__all__ = [
    "PipelineError",
    "ConversionEngine",
    "convert",
    "init_toy_bundle",
    "init_full_bundle",
]

# placeholder corpus statistics for freshly initialized bundles; real values
# come from whatever corpus a trainer saw
INIT_MEL_MEAN = -5.0
INIT_MEL_STD = 2.5


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _run_stage(stage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, str(exc)) from exc


class ConversionEngine:
    """Read-only inference wrapper around a loaded bundle."""

    def __init__(self, bundle: ModelBundle):
        bundle.validate()
        self.bundle = bundle
        self.encoder = ContentEncoder(bundle.encoder_config, bundle.params).fold()
        self.decoder = Decoder(bundle.decoder_config, bundle.params).fold()
        self.speaker = SpeakerEncoder(bundle.speaker_config, bundle.params)
        self.dtype = bundle.params["encoder.stem.w"].dtype

    def source_mel(self, source: Waveform):
        """Frontend half of the pipeline: raw and normalized source mels."""
        wave = _run_stage("resample", resample, source, self.bundle.encoder_frontend.sample_rate_hz)
        raw = _run_stage("frontend", log_mel, wave, self.bundle.encoder_frontend)
        norm = _run_stage(
            "normalize", normalize_per_channel, raw, self.bundle.mel_mean, self.bundle.mel_std
        )
        return raw, norm

    def embed(self, wave: Waveform) -> np.ndarray:
        return _run_stage("speaker", self.speaker.embed_utterance, wave)

    def embed_references(self, refs) -> np.ndarray:
        embs = [self.embed(r) for r in refs]
        if len(embs) == 1:
            return embs[0]
        return _run_stage("speaker", mean_embedding, np.stack(embs))

    def predict_mel(self, norm_mel_values, speaker_embedding) -> np.ndarray:
        """Timed model core: encode, condition, decode (no frontend/vocoder)."""
        x = np.ascontiguousarray(norm_mel_values, dtype=self.dtype)
        feats = _run_stage("encode", self.encoder.encode, x)
        cond = condition(feats, speaker_embedding.astype(self.dtype))
        frames = x.shape[-1]
        return _run_stage("decode", self.decoder.decode, cond, frames)

    def convert(self, source: Waveform, target_refs, gl_config: GriffinLimConfig | None = None):
        """Full conversion; returns (waveform, predicted MelSpectrogram)."""
        if len(source.samples) == 0:
            raise PipelineError("input", "source audio is empty")
        refs = list(target_refs)
        if not refs:
            raise PipelineError("input", "need at least one target reference")
        raw, norm = self.source_mel(source)
        spk = self.embed_references(refs)
        pred = self.predict_mel(norm.values, spk)
        mel_out = MelSpectrogram(np.asarray(pred, dtype=np.float64), self.bundle.encoder_frontend)
        if gl_config is None:
            gl_config = GriffinLimConfig(frontend=self.bundle.encoder_frontend)
        wave = _run_stage("vocode", synthesize, mel_out, gl_config)
        return wave, mel_out


def convert(source: Waveform, target_refs, bundle: ModelBundle,
            gl_config: GriffinLimConfig | None = None):
    """One-shot conversion on a bundle; see ConversionEngine for reuse."""
    return ConversionEngine(bundle).convert(source, target_refs, gl_config)


def _build_bundle(encoder_config: EncoderConfig, decoder_config: DecoderConfig,
                  speaker_config: SpeakerConfig, seed: int, dtype) -> ModelBundle:
    params = {}
    params.update(ContentEncoder.init_params(encoder_config, dtype=dtype, seed=seed))
    params.update(Decoder.init_params(decoder_config, dtype=dtype, seed=seed + 1))
    params.update(SpeakerEncoder.init_params(speaker_config, dtype=dtype, seed=seed + 2))
    n = ENCODER_FRONTEND.n_mels
    bundle = ModelBundle(
        params=params,
        encoder_config=encoder_config,
        decoder_config=decoder_config,
        speaker_config=speaker_config,
        encoder_frontend=ENCODER_FRONTEND,
        speaker_frontend=SPEAKER_FRONTEND,
        mel_mean=np.full(n, INIT_MEL_MEAN, dtype=dtype),
        mel_std=np.full(n, INIT_MEL_STD, dtype=dtype),
    )
    return bundle.validate()


def init_toy_bundle(seed: int = 0, dtype=np.float32) -> ModelBundle:
    """Seeded random desk-scale bundle (used by tests, CLI smoke, benchmarks)."""
    return _build_bundle(TOY_ENCODER_CONFIG, TOY_DECODER_CONFIG, TOY_SPEAKER_CONFIG, seed, dtype)


def init_full_bundle(seed: int = 0, dtype=np.float32) -> ModelBundle:
    """Seeded random full-size bundle (paper-scale parameter counts)."""
    return _build_bundle(FULL_ENCODER_CONFIG, FULL_DECODER_CONFIG, FULL_SPEAKER_CONFIG, seed, dtype)
