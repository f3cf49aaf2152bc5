"""FastAPI application exposing the conversion engine.

The app holds one read-only engine built from a checkpoint (given at startup
or loaded later via POST /checkpoint/load); conversion requests share it.
"""

from __future__ import annotations

import base64
import binascii

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..bench import bench
from ..checkpoint import CheckpointError, load_bundle
from ..content_encoder import encoder_param_count
from ..decoder import decoder_param_count
from ..frontend import FormatError, decode_wav_bytes, encode_wav_bytes
from ..pipeline import ConversionEngine, PipelineError
from ..speaker_encoder import cosine_similarity
from ..vocoder import GriffinLimConfig
from . import schemas


def create_app(checkpoint_path: str | None = None) -> FastAPI:
    app = FastAPI(title="convoice", version=__version__)
    state = {"engine": None}

    if checkpoint_path is not None:
        state["engine"] = ConversionEngine(load_bundle(checkpoint_path))

    def engine() -> ConversionEngine:
        if state["engine"] is None:
            raise HTTPException(status_code=409, detail="no checkpoint loaded")
        return state["engine"]

    def decode_audio(b64: str, what: str):
        try:
            return decode_wav_bytes(base64.b64decode(b64, validate=True))
        except (binascii.Error, FormatError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=f"bad {what}: {exc}") from exc

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(
            status="ok", checkpoint_loaded=state["engine"] is not None, version=__version__
        )

    @app.get("/model", response_model=schemas.ModelInfoResponse)
    def model_info():
        bundle = engine().bundle
        enc = encoder_param_count(bundle.encoder_config)
        dec = decoder_param_count(bundle.decoder_config)
        return schemas.ModelInfoResponse(
            encoder_params=enc,
            decoder_params=dec,
            total_params=enc + dec,
            feature_channels=bundle.encoder_config.feature_channels,
            embed_dim=bundle.speaker_config.embed_dim,
            sample_rate_hz=bundle.encoder_frontend.sample_rate_hz,
            mel_channels=bundle.encoder_frontend.n_mels,
            hop_length=bundle.encoder_frontend.hop_length,
        )

    @app.post("/checkpoint/load", response_model=schemas.LoadCheckpointResponse)
    def load_checkpoint(req: schemas.LoadCheckpointRequest):
        try:
            bundle = load_bundle(req.path)
        except (OSError, CheckpointError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        state["engine"] = ConversionEngine(bundle)
        return schemas.LoadCheckpointResponse(loaded=True, tensors=len(bundle.params))

    @app.post("/convert", response_model=schemas.ConvertResponse)
    def convert(req: schemas.ConvertRequest):
        eng = engine()
        source = decode_audio(req.source_wav_b64, "source audio")
        refs = [decode_audio(b, "target audio") for b in req.target_wavs_b64]
        gl = GriffinLimConfig(n_iters=req.griffin_lim_iters,
                              frontend=eng.bundle.encoder_frontend)
        try:
            wave, mel = eng.convert(source, refs, gl)
        except PipelineError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return schemas.ConvertResponse(
            output_wav_b64=base64.b64encode(encode_wav_bytes(wave)).decode("ascii"),
            sample_rate_hz=wave.sample_rate_hz,
            source_mel_frames=mel.n_frames,
            output_samples=len(wave.samples),
            duration_s=wave.duration_s,
        )

    @app.post("/embed", response_model=schemas.EmbedResponse)
    def embed(req: schemas.EmbedRequest):
        eng = engine()
        wave = decode_audio(req.wav_b64, "audio")
        try:
            emb = eng.embed(wave)
        except PipelineError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return schemas.EmbedResponse(
            embedding=[float(v) for v in emb], norm=float(np.linalg.norm(emb))
        )

    @app.post("/similarity", response_model=schemas.SimilarityResponse)
    def similarity(req: schemas.SimilarityRequest):
        a = np.asarray(req.a, dtype=np.float64)
        b = np.asarray(req.b, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1:
            raise HTTPException(status_code=422, detail="embeddings must be equal-length vectors")
        return schemas.SimilarityResponse(cosine=cosine_similarity(a, b))

    @app.post("/bench", response_model=schemas.BenchResponse)
    def run_bench(req: schemas.BenchRequest):
        eng = engine()
        try:
            reports = bench(
                eng.bundle, req.wav_dir, req.batch_sizes,
                warmup=req.warmup, reps=req.reps, threads=req.threads,
            )
        except PipelineError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return schemas.BenchResponse(
            reports=[schemas.BenchReportModel(**r.to_dict()) for r in reports]
        )

    return app
