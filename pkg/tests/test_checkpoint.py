"""Checkpoint format: bit-exact round trips and distinct corruption errors."""

import numpy as np
import pytest

from convoice.checkpoint import (
    BadMagicError,
    DuplicateNameError,
    TruncatedPayloadError,
    VersionMismatchError,
    load_tensor,
    load_tensors,
    save_tensor,
    save_tensors,
)


@pytest.fixture
def sample_tensors():
    rng = np.random.default_rng(0)
    return {
        "encoder.stem.w": rng.standard_normal((8, 4, 3)).astype(np.float32),
        "speaker.fc.b": rng.standard_normal(16).astype(np.float64),
        "scalar.step": np.float32(3.0).reshape(()) * np.ones(()),
    }


class TestRoundTrip:
    def test_bit_exact(self, tmp_path, sample_tensors):
        p = tmp_path / "c.cvck"
        save_tensors(p, sample_tensors, configs={"note": "x", "n": 3})
        back, configs = load_tensors(p)
        assert configs == {"note": "x", "n": 3}
        assert set(back) == set(sample_tensors)
        for k in sample_tensors:
            src = np.asarray(sample_tensors[k])
            assert back[k].dtype == src.dtype
            assert back[k].shape == src.shape
            assert back[k].tobytes() == src.tobytes()

    def test_empty_bundle(self, tmp_path):
        p = tmp_path / "empty.cvck"
        save_tensors(p, {})
        back, configs = load_tensors(p)
        assert back == {} and configs is None

    def test_single_tensor_sidecar(self, tmp_path):
        mel = np.random.default_rng(1).standard_normal((80, 12)).astype(np.float32)
        p = tmp_path / "mel.cvck"
        save_tensor(p, "mel", mel)
        name, back = load_tensor(p)
        assert name == "mel"
        assert back.tobytes() == mel.tobytes()


class TestCorruption:
    def write(self, tmp_path, tensors):
        p = tmp_path / "c.cvck"
        save_tensors(p, tensors)
        return p

    def test_bad_magic(self, tmp_path, sample_tensors):
        p = self.write(tmp_path, sample_tensors)
        raw = bytearray(p.read_bytes())
        raw[:4] = b"NOPE"
        p.write_bytes(bytes(raw))
        with pytest.raises(BadMagicError):
            load_tensors(p)

    def test_version_mismatch(self, tmp_path, sample_tensors):
        p = self.write(tmp_path, sample_tensors)
        raw = bytearray(p.read_bytes())
        raw[4] = 99
        p.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatchError):
            load_tensors(p)

    def test_truncated_payload(self, tmp_path, sample_tensors):
        p = self.write(tmp_path, sample_tensors)
        raw = p.read_bytes()
        p.write_bytes(raw[: len(raw) - 7])
        with pytest.raises(TruncatedPayloadError):
            load_tensors(p)

    def test_duplicate_names(self, tmp_path):
        import struct

        p = tmp_path / "dup.cvck"
        save_tensors(p, {"a": np.zeros(2, dtype=np.float32)})
        raw = bytearray(p.read_bytes())
        entry = raw[12:]
        raw[8:12] = struct.pack("<I", 2)  # two entries, same bytes twice
        p.write_bytes(bytes(raw) + bytes(entry))
        with pytest.raises(DuplicateNameError):
            load_tensors(p)


class TestBundle:
    def test_bundle_round_trip(self, tmp_path):
        from convoice.pipeline import init_toy_bundle
        from convoice.checkpoint import load_bundle, save_bundle

        bundle = init_toy_bundle(seed=5)
        p = tmp_path / "toy.cvck"
        save_bundle(p, bundle)
        back = load_bundle(p)
        assert set(back.params) == set(bundle.params)
        for k in bundle.params:
            assert back.params[k].tobytes() == bundle.params[k].tobytes()
        assert back.encoder_config == bundle.encoder_config
        assert back.decoder_config == bundle.decoder_config
        assert back.speaker_config == bundle.speaker_config
        assert back.encoder_frontend == bundle.encoder_frontend
        assert back.mel_mean.tobytes() == bundle.mel_mean.tobytes()

    def test_inconsistent_bundle_rejected(self):
        from convoice.checkpoint import BundleValidationError, ModelBundle
        from convoice.content_encoder import TOY_ENCODER_CONFIG
        from convoice.decoder import FULL_DECODER_CONFIG
        from convoice.frontend import ENCODER_FRONTEND, SPEAKER_FRONTEND
        from convoice.speaker_encoder import TOY_SPEAKER_CONFIG

        bundle = ModelBundle(
            params={},
            encoder_config=TOY_ENCODER_CONFIG,  # tap dim 64
            decoder_config=FULL_DECODER_CONFIG,  # expects 768
            speaker_config=TOY_SPEAKER_CONFIG,
            encoder_frontend=ENCODER_FRONTEND,
            speaker_frontend=SPEAKER_FRONTEND,
            mel_mean=np.zeros(80),
            mel_std=np.ones(80),
        )
        with pytest.raises(BundleValidationError):
            bundle.validate()
