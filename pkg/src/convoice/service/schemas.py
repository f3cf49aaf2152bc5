"""Pydantic request/response models for the conversion service.

Audio travels as base64-encoded WAV bytes so requests are self-contained.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    checkpoint_loaded: bool
    version: str


class ModelInfoResponse(BaseModel):
    encoder_params: int
    decoder_params: int
    total_params: int
    feature_channels: int
    embed_dim: int
    sample_rate_hz: int
    mel_channels: int
    hop_length: int


class LoadCheckpointRequest(BaseModel):
    path: str


class LoadCheckpointResponse(BaseModel):
    loaded: bool
    tensors: int


class ConvertRequest(BaseModel):
    source_wav_b64: str
    target_wavs_b64: list[str] = Field(min_length=1)
    griffin_lim_iters: int = Field(default=60, ge=1, le=500)


class ConvertResponse(BaseModel):
    output_wav_b64: str
    sample_rate_hz: int
    source_mel_frames: int
    output_samples: int
    duration_s: float


class EmbedRequest(BaseModel):
    wav_b64: str


class EmbedResponse(BaseModel):
    embedding: list[float]
    norm: float


class SimilarityRequest(BaseModel):
    a: list[float]
    b: list[float]


class SimilarityResponse(BaseModel):
    cosine: float


class BenchRequest(BaseModel):
    wav_dir: str
    batch_sizes: list[int] = Field(default=[1, 4, 8], min_length=1)
    reps: int = Field(default=20, ge=1)
    warmup: int = Field(default=3, ge=0)
    threads: int = Field(default=1, ge=1)


class BenchReportModel(BaseModel):
    batch_size: int
    mean_latency_s: float
    latency_std_s: float
    rtf: float
    n_samples: int
    mean_audio_duration_s: float
    threads: int


class BenchResponse(BaseModel):
    reports: list[BenchReportModel]
