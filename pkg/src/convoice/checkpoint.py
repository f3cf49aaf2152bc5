"""Portable binary checkpoint: named tensors plus a JSON config entry.

Layout (all integers little-endian):

    magic   "CVCK" (4 bytes)
    version u32
    count   u32
    entry*  name_len u16, name (UTF-8), dtype u8, ndim u8, dims u32 each,
            raw little-endian payload

dtype codes: 0 = float32, 1 = float64, 2 = raw bytes (UTF-8 JSON for the
``__config__`` entry). Load failures are distinct exception types so callers
can tell corruption modes apart.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .content_encoder import EncoderConfig
from .decoder import DecoderConfig
from .frontend import FrontendConfig
from .speaker_encoder import SpeakerConfig

__all__ = [
    "CheckpointError",
    "BadMagicError",
    "VersionMismatchError",
    "TruncatedPayloadError",
    "DuplicateNameError",
    "BundleValidationError",
    "FORMAT_VERSION",
    "save_tensors",
    "load_tensors",
    "save_tensor",
    "load_tensor",
    "ModelBundle",
    "save_bundle",
    "load_bundle",
]

MAGIC = b"CVCK"
FORMAT_VERSION = 1
CONFIG_ENTRY = "__config__"

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype(np.uint8)}


class CheckpointError(Exception):
    """Base class for checkpoint load/save failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class DuplicateNameError(CheckpointError):
    pass


class BundleValidationError(CheckpointError):
    """Mutually inconsistent configs or missing weights in a loaded bundle."""


def _write_entry(out, name, array):
    shape = array.shape  # ascontiguousarray promotes 0-d to (1,)
    array = np.ascontiguousarray(array).reshape(shape)
    code = _DTYPE_CODES.get(array.dtype)
    if code is None:
        raise CheckpointError(f"unsupported dtype {array.dtype} for entry {name!r}")
    encoded = name.encode("utf-8")
    out.write(struct.pack("<H", len(encoded)))
    out.write(encoded)
    out.write(struct.pack("<BB", code, array.ndim))
    for d in array.shape:
        out.write(struct.pack("<I", d))
    if array.dtype == np.float32:
        out.write(array.astype("<f4", copy=False).tobytes())
    elif array.dtype == np.float64:
        out.write(array.astype("<f8", copy=False).tobytes())
    else:
        out.write(array.tobytes())


def save_tensors(path, tensors: dict, configs: dict | None = None) -> None:
    """Write a name->array map (plus an optional JSON config entry)."""
    entries = dict(tensors)
    if configs is not None:
        payload = json.dumps(configs, sort_keys=True).encode("utf-8")
        entries[CONFIG_ENTRY] = np.frombuffer(payload, dtype=np.uint8)
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", FORMAT_VERSION, len(entries)))
    for name, array in entries.items():
        _write_entry(out, name, np.asarray(array))
    with open(path, "wb") as fh:
        fh.write(out.getvalue())


def load_tensors(path):
    """Read back (tensors, configs); configs is None when absent."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"bad magic: expected {MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 12:
        raise TruncatedPayloadError("header truncated")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, expected {FORMAT_VERSION}")
    tensors = {}
    pos = 12
    for _ in range(count):
        if pos + 2 > len(raw):
            raise TruncatedPayloadError("entry header truncated")
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        if pos + name_len + 2 > len(raw):
            raise TruncatedPayloadError("entry name truncated")
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", raw, pos)
        pos += 2
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"unknown dtype code {code} in entry {name!r}")
        if pos + 4 * ndim > len(raw):
            raise TruncatedPayloadError(f"dims of entry {name!r} truncated")
        dims = struct.unpack_from(f"<{ndim}I", raw, pos) if ndim else ()
        pos += 4 * ndim
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        if ndim == 0:
            nbytes = dtype.itemsize
        if pos + nbytes > len(raw):
            raise TruncatedPayloadError(f"payload of entry {name!r} truncated")
        data = np.frombuffer(raw[pos : pos + nbytes], dtype=dtype)
        pos += nbytes
        if name in tensors:
            raise DuplicateNameError(f"duplicate entry name {name!r}")
        tensors[name] = data.reshape(dims) if ndim else data.reshape(())
    configs = None
    if CONFIG_ENTRY in tensors:
        configs = json.loads(tensors.pop(CONFIG_ENTRY).tobytes().decode("utf-8"))
    return tensors, configs


def save_tensor(path, name, array) -> None:
    """Single-tensor sidecar file in the same entry format."""
    save_tensors(path, {name: array})


def load_tensor(path):
    tensors, _ = load_tensors(path)
    if len(tensors) != 1:
        raise CheckpointError(f"expected a single tensor, found {len(tensors)}")
    return next(iter(tensors.items()))


# ---------------------------------------------------------------------------
# model bundle
# ---------------------------------------------------------------------------

@dataclass
class ModelBundle:
    """All weights and configs needed to run the conversion pipeline."""

    params: dict
    encoder_config: EncoderConfig
    decoder_config: DecoderConfig
    speaker_config: SpeakerConfig
    encoder_frontend: FrontendConfig
    speaker_frontend: FrontendConfig
    mel_mean: np.ndarray
    mel_std: np.ndarray
    version: int = FORMAT_VERSION
    mel_scale: str = field(default="htk-unit-peak")

    def validate(self) -> "ModelBundle":
        enc, dec = self.encoder_config, self.decoder_config
        feat = enc.block_channels[enc.tap_block - 1]
        if feat + self.speaker_config.embed_dim != dec.in_channels:
            raise BundleValidationError(
                f"encoder tap dim {feat} + embed {self.speaker_config.embed_dim} != "
                f"decoder input {dec.in_channels}"
            )
        if enc.stem_stride != dec.upsample_factor:
            raise BundleValidationError(
                f"encoder stride {enc.stem_stride} != decoder upsample {dec.upsample_factor}"
            )
        n = self.encoder_frontend.n_mels
        if self.mel_mean.shape != (n,) or self.mel_std.shape != (n,):
            raise BundleValidationError("normalization statistics must match mel channel count")
        return self

    def copy(self) -> "ModelBundle":
        return ModelBundle(
            params={k: v.copy() for k, v in self.params.items()},
            encoder_config=self.encoder_config,
            decoder_config=self.decoder_config,
            speaker_config=self.speaker_config,
            encoder_frontend=self.encoder_frontend,
            speaker_frontend=self.speaker_frontend,
            mel_mean=self.mel_mean.copy(),
            mel_std=self.mel_std.copy(),
            version=self.version,
            mel_scale=self.mel_scale,
        )


def save_bundle(path, bundle: ModelBundle) -> None:
    bundle.validate()
    configs = {
        "version": bundle.version,
        "mel_scale": bundle.mel_scale,
        "encoder": asdict(bundle.encoder_config),
        "decoder": asdict(bundle.decoder_config),
        "speaker": asdict(bundle.speaker_config),
        "encoder_frontend": asdict(bundle.encoder_frontend),
        "speaker_frontend": asdict(bundle.speaker_frontend),
    }
    tensors = dict(bundle.params)
    tensors["norm.mel_mean"] = bundle.mel_mean
    tensors["norm.mel_std"] = bundle.mel_std
    save_tensors(path, tensors, configs)


def _tupled(d, keys):
    return {k: tuple(v) if k in keys else v for k, v in d.items()}


def load_bundle(path) -> ModelBundle:
    tensors, configs = load_tensors(path)
    if configs is None:
        raise BundleValidationError("checkpoint has no __config__ entry")
    try:
        mean = tensors.pop("norm.mel_mean")
        std = tensors.pop("norm.mel_std")
    except KeyError as exc:
        raise BundleValidationError(f"missing normalization entry {exc}") from exc
    tup = ("block_channels", "block_kernels")
    bundle = ModelBundle(
        params=tensors,
        encoder_config=EncoderConfig(**_tupled(configs["encoder"], tup)),
        decoder_config=DecoderConfig(**_tupled(configs["decoder"], tup)),
        speaker_config=SpeakerConfig(**configs["speaker"]),
        encoder_frontend=FrontendConfig(**configs["encoder_frontend"]),
        speaker_frontend=FrontendConfig(**configs["speaker_frontend"]),
        mel_mean=mean,
        mel_std=std,
        version=configs.get("version", FORMAT_VERSION),
        mel_scale=configs.get("mel_scale", "htk-unit-peak"),
    )
    return bundle.validate()
