"""HTTP service tests against the in-process FastAPI app."""

import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from convoice.checkpoint import save_bundle
from convoice.frontend import Waveform, decode_wav_bytes, encode_wav_bytes
from convoice.pipeline import init_toy_bundle
from convoice.service.app import create_app


def wav_b64(seconds=0.8, freq=220.0, seed=None):
    t = np.arange(int(seconds * 22050)) / 22050
    x = 0.5 * np.sin(2 * np.pi * freq * t)
    if seed is not None:
        x = np.clip(x + 0.05 * np.random.default_rng(seed).standard_normal(len(t)), -1, 1)
    return base64.b64encode(encode_wav_bytes(Waveform(x, 22050))).decode("ascii")


@pytest.fixture(scope="module")
def ckpt_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("srv") / "toy.cvck"
    save_bundle(path, init_toy_bundle(seed=1))
    return path


@pytest.fixture(scope="module")
def client(ckpt_path):
    return TestClient(create_app(checkpoint_path=str(ckpt_path)))


class TestHealthAndModel:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"
        assert body["checkpoint_loaded"] is True

    def test_model_info(self, client):
        body = client.get("/model").json()
        assert body["mel_channels"] == 80
        assert body["hop_length"] == 256
        assert body["embed_dim"] == 256
        assert body["total_params"] == body["encoder_params"] + body["decoder_params"]

    def test_unloaded_app_409(self):
        bare = TestClient(create_app())
        assert bare.get("/health").json()["checkpoint_loaded"] is False
        assert bare.get("/model").status_code == 409
        assert bare.post("/embed", json={"wav_b64": wav_b64()}).status_code == 409

    def test_load_checkpoint_endpoint(self, ckpt_path):
        bare = TestClient(create_app())
        resp = bare.post("/checkpoint/load", json={"path": str(ckpt_path)})
        assert resp.status_code == 200 and resp.json()["loaded"]
        assert bare.get("/model").status_code == 200

    def test_load_bad_checkpoint_422(self, tmp_path):
        bare = TestClient(create_app())
        resp = bare.post("/checkpoint/load", json={"path": str(tmp_path / "nope.cvck")})
        assert resp.status_code == 422


class TestConvert:
    def test_round_trip(self, client):
        resp = client.post("/convert", json={
            "source_wav_b64": wav_b64(1.0, 220, seed=0),
            "target_wavs_b64": [wav_b64(0.8, 330, seed=1)],
            "griffin_lim_iters": 3,
        })
        assert resp.status_code == 200
        body = resp.json()
        wave = decode_wav_bytes(base64.b64decode(body["output_wav_b64"]))
        assert wave.sample_rate_hz == body["sample_rate_hz"] == 22050
        assert len(wave.samples) == body["output_samples"]
        assert body["output_samples"] == body["source_mel_frames"] * 256

    def test_bad_audio_422(self, client):
        resp = client.post("/convert", json={
            "source_wav_b64": base64.b64encode(b"not a wav").decode(),
            "target_wavs_b64": [wav_b64()],
        })
        assert resp.status_code == 422

    def test_empty_targets_422(self, client):
        resp = client.post("/convert", json={
            "source_wav_b64": wav_b64(),
            "target_wavs_b64": [],
        })
        assert resp.status_code == 422


class TestEmbedAndSimilarity:
    def test_embed_unit_norm(self, client):
        resp = client.post("/embed", json={"wav_b64": wav_b64(1.2, 180, seed=2)})
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["embedding"]) == 256
        assert abs(body["norm"] - 1.0) < 1e-5

    def test_similarity_self_is_one(self, client):
        emb = client.post("/embed", json={"wav_b64": wav_b64(seed=3)}).json()["embedding"]
        resp = client.post("/similarity", json={"a": emb, "b": emb})
        assert resp.json()["cosine"] == pytest.approx(1.0, abs=1e-6)

    def test_similarity_shape_mismatch_422(self, client):
        resp = client.post("/similarity", json={"a": [1.0, 0.0], "b": [1.0]})
        assert resp.status_code == 422


class TestBenchEndpoint:
    def test_bench_reports(self, client, tmp_path_factory):
        from convoice.frontend import save_wav

        d = tmp_path_factory.mktemp("bench_wavs")
        t = np.arange(int(1.0 * 22050)) / 22050
        save_wav(d / "a.wav", Waveform(0.4 * np.sin(2 * np.pi * 200 * t), 22050))
        resp = client.post("/bench", json={
            "wav_dir": str(d), "batch_sizes": [1, 2], "reps": 2, "warmup": 1,
        })
        assert resp.status_code == 200
        reports = resp.json()["reports"]
        assert [r["batch_size"] for r in reports] == [1, 2]
        for r in reports:
            assert r["rtf"] > 0 and r["mean_latency_s"] > 0

    def test_bench_missing_dir_422(self, client, tmp_path):
        resp = client.post("/bench", json={"wav_dir": str(tmp_path / "none")})
        assert resp.status_code == 422
