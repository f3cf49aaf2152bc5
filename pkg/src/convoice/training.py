"""Desk-scale trainers exercising the three losses on synthetic data.

The decoder trainer honors the frozen-encoder protocol: content features and
speaker embeddings are computed once through the frozen networks, and only
``decoder.*`` tensors (weights and batchnorm buffers) are ever written. The
speaker trainer fits the LSTM encoder with the GE2E objective on clustered
filtered-noise spectra; the ASR trainer fits encoder + head with CTC.

All trainers are deterministic given their seed and run in float64 by
default so loss traces are exactly reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .content_encoder import ContentEncoder, EncoderConfig, TOY_ENCODER_CONFIG
from .decoder import Decoder, condition
from .frontend import ENCODER_FRONTEND, Waveform, log_mel, normalize_per_channel, resample
from .losses import collapse, ctc_loss, ge2e_loss, l2_loss
from .speaker_encoder import SpeakerConfig, SpeakerEncoder, TOY_SPEAKER_CONFIG

__all__ = [
    "TrainingError",
    "Adam",
    "SyntheticSpeakerSet",
    "make_toy_voice_dataset",
    "make_toy_asr_pair",
    "greedy_collapse",
    "train_decoder_toy",
    "train_speaker_toy",
    "train_asr_toy",
]

GE2E_INIT_W = 10.0
GE2E_INIT_B = -5.0
GE2E_MIN_W = 1e-4


class TrainingError(RuntimeError):
    pass


class Adam:
    """Adam with a constant learning rate; updates parameter arrays in place."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, grads: dict) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for k in sorted(self.params):
            g = grads.get(k)
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            self.params[k] -= update


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpeakerSet:
    """Clustered filtered-noise spectra standing in for a speaker corpus.

    Each speaker gets a smooth spectral template (a few formant-like bumps);
    utterances are the template plus slow temporal modulation and jitter.
    Deterministic given the seed.
    """

    n_speakers: int
    utterances_per_speaker: int
    seed: int
    n_mels: int = 40
    frames: int = 160
    jitter: float = 0.15
    template_scale: float = 2.0

    def windows(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        n, m = self.n_speakers, self.utterances_per_speaker
        out = np.empty((n, m, self.n_mels, self.frames))
        chan = np.arange(self.n_mels)
        time = np.arange(self.frames)
        for s in range(n):
            template = np.full(self.n_mels, -4.0)
            for _ in range(3):
                center = rng.uniform(0, self.n_mels)
                width = rng.uniform(2.0, 6.0)
                amp = rng.uniform(1.0, self.template_scale + 1.0)
                template += amp * np.exp(-0.5 * ((chan - center) / width) ** 2)
            for u in range(m):
                rate = rng.uniform(0.02, 0.08)
                phase = rng.uniform(0, 2 * np.pi)
                modulation = 0.3 * np.sin(2 * np.pi * rate * time + phase)
                noise = self.jitter * rng.standard_normal((self.n_mels, self.frames))
                out[s, u] = template[:, None] + modulation[None, :] + noise
        return out


def make_toy_voice_dataset(n_utterances: int, seed: int = 0, duration_s: float = 0.6,
                           sample_rate: int = 22050):
    """Harmonic voices with per-utterance pitch and spectral tilt.

    Returns [(source, speaker_reference)] pairs for self-reconstruction
    training (the reference is the source utterance itself).
    """
    rng = np.random.default_rng(seed)
    t = np.arange(int(duration_s * sample_rate)) / sample_rate
    dataset = []
    for _ in range(n_utterances):
        f0 = rng.uniform(110.0, 280.0)
        tilt = rng.uniform(0.6, 1.4)
        x = np.zeros_like(t)
        for k in range(1, 12):
            if k * f0 > sample_rate / 2 - 200:
                break
            x += (1.0 / k**tilt) * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
        x += 0.02 * rng.standard_normal(len(t))
        x *= 0.5 / np.abs(x).max()
        wave = Waveform(x, sample_rate)
        dataset.append((wave, wave))
    return dataset


def make_toy_asr_pair(seed: int = 0, frames: int = 50, n_tokens: int = 3,
                      config: EncoderConfig = TOY_ENCODER_CONFIG):
    """One synthetic (mel, target) pair with a feasible token sequence."""
    rng = np.random.default_rng(seed)
    mel = np.zeros((config.mel_channels, frames))
    for _ in range(6):
        c = rng.uniform(0, config.mel_channels)
        f = rng.uniform(0, frames)
        mel += rng.uniform(0.5, 2.0) * np.exp(
            -0.5 * (((np.arange(config.mel_channels)[:, None] - c) / 4.0) ** 2
                    + ((np.arange(frames)[None, :] - f) / 6.0) ** 2)
        )
    mel += 0.1 * rng.standard_normal(mel.shape)
    target = tuple(int(v) for v in rng.integers(1, config.vocab_size, size=n_tokens))
    return mel, target


def greedy_collapse(logits_vt, blank: int = 0):
    """Per-frame argmax over a (V, T) logit matrix, CTC-collapsed."""
    path = np.argmax(np.asarray(logits_vt), axis=0)
    return collapse(path.tolist(), blank)


# ---------------------------------------------------------------------------
# trainers
# ---------------------------------------------------------------------------

def train_decoder_toy(bundle, dataset, steps: int, lr: float = 1e-3):
    """Fit only the decoder by L2 self-reconstruction; encoders stay frozen.

    Returns (new_bundle, loss_trace). The input bundle is copied, features and
    speaker embeddings are computed once through the frozen networks, and the
    optimizer only ever sees ``decoder.*`` tensors.
    """
    if not dataset:
        raise TrainingError("empty dataset")
    bundle = bundle.copy()
    encoder = ContentEncoder(bundle.encoder_config, bundle.params)
    speaker = SpeakerEncoder(bundle.speaker_config, bundle.params)
    decoder = Decoder(bundle.decoder_config, bundle.params)

    groups = {}  # frame count -> (conditioned inputs, targets)
    for source, ref in dataset:
        wave = resample(source, bundle.encoder_frontend.sample_rate_hz)
        raw = log_mel(wave, bundle.encoder_frontend)
        norm = normalize_per_channel(raw, bundle.mel_mean, bundle.mel_std)
        feats = encoder.encode(norm.values)
        emb = speaker.embed_utterance(ref)
        cond = condition(feats, emb)
        groups.setdefault(raw.values.shape[1], []).append((cond, raw.values))

    batches = []
    for frames, items in sorted(groups.items()):
        conds = np.stack([c for c, _ in items])
        targets = np.stack([t for _, t in items])
        batches.append((frames, conds, targets))
    total_elems = sum(t.size for _, _, t in batches)

    decoder_params = {k: v for k, v in bundle.params.items() if k.startswith("decoder.")}
    trainable = {k: v for k, v in decoder_params.items()
                 if not (k.endswith("bn_mean") or k.endswith("bn_var"))}
    opt = Adam(trainable, lr=lr)
    trace = []
    for step in range(steps):
        grads = {}
        stat_updates = []
        loss_acc = 0.0
        for frames, conds, targets in batches:
            pred, cache = decoder.forward_train(conds, frames, stat_updates)
            loss, dpred = l2_loss(pred, targets)
            # re-weight so the trace is the mean over every element in the epoch
            weight = targets.size / total_elems
            loss_acc += loss * weight
            decoder.backward_train(dpred * weight, cache, grads)
        if not np.isfinite(loss_acc):
            raise TrainingError(f"non-finite loss at step {step}")
        opt.step(grads)
        for name, value in stat_updates:
            bundle.params[name][...] = value
        trace.append(float(loss_acc))
    return bundle, trace


@dataclass
class SimilarityReport:
    intra: float
    inter: float

    @property
    def margin(self) -> float:
        return self.intra - self.inter


def train_speaker_toy(speaker_set: SyntheticSpeakerSet, steps: int, lr: float = 5e-3,
                      seed: int = 0, config: SpeakerConfig = TOY_SPEAKER_CONFIG,
                      dtype=np.float64):
    """GE2E training of the LSTM speaker encoder on synthetic clusters.

    Returns (params, loss_trace, held_out_report); the report compares mean
    intra- vs inter-speaker cosine on freshly generated speakers.
    """
    if speaker_set.n_speakers < 4 or speaker_set.utterances_per_speaker < 4:
        raise TrainingError("need at least 4 speakers with 4 utterances each")
    if speaker_set.frames != config.window_frames or speaker_set.n_mels != config.mel_channels:
        raise TrainingError("speaker set geometry does not match the encoder config")
    params = SpeakerEncoder.init_params(config, dtype=dtype, seed=seed)
    params["ge2e.w"] = np.array([GE2E_INIT_W], dtype=dtype)
    params["ge2e.b"] = np.array([GE2E_INIT_B], dtype=dtype)
    encoder = SpeakerEncoder(config, params)

    wins = speaker_set.windows().astype(dtype)
    n, m = wins.shape[:2]
    batch = wins.reshape(n * m, config.mel_channels, config.window_frames)
    batch = np.ascontiguousarray(batch.transpose(0, 2, 1))  # (B, T, 40)

    opt = Adam(params, lr=lr)
    trace = []
    for step in range(steps):
        emb, cache = encoder.forward_train(batch)
        loss, (d_emb, dw, db) = ge2e_loss(
            emb.reshape(n, m, -1), float(params["ge2e.w"][0]), float(params["ge2e.b"][0])
        )
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}")
        grads = {"ge2e.w": np.array([dw], dtype=dtype), "ge2e.b": np.array([db], dtype=dtype)}
        encoder.backward_train(d_emb.reshape(n * m, -1), cache, grads)
        opt.step(grads)
        params["ge2e.w"][0] = max(float(params["ge2e.w"][0]), GE2E_MIN_W)
        trace.append(float(loss))

    held_out = SyntheticSpeakerSet(
        n_speakers=speaker_set.n_speakers,
        utterances_per_speaker=speaker_set.utterances_per_speaker,
        seed=speaker_set.seed + 7919,
        n_mels=speaker_set.n_mels,
        frames=speaker_set.frames,
        jitter=speaker_set.jitter,
        template_scale=speaker_set.template_scale,
    )
    report = evaluate_speaker_similarity(encoder, held_out)
    return params, trace, report


def evaluate_speaker_similarity(encoder: SpeakerEncoder, speaker_set: SyntheticSpeakerSet):
    wins = speaker_set.windows()
    n, m = wins.shape[:2]
    embs = np.stack([
        np.stack([encoder.encode_window(wins[s, u]) for u in range(m)]) for s in range(n)
    ])
    intra, inter = [], []
    for s1 in range(n):
        for u1 in range(m):
            for s2 in range(n):
                for u2 in range(m):
                    if s1 == s2 and u1 == u2:
                        continue
                    sim = float(embs[s1, u1] @ embs[s2, u2])
                    (intra if s1 == s2 else inter).append(sim)
    return SimilarityReport(float(np.mean(intra)), float(np.mean(inter)))


def train_asr_toy(pairs, steps: int, lr: float = 3e-3, seed: int = 0,
                  config: EncoderConfig = TOY_ENCODER_CONFIG, dtype=np.float64):
    """CTC training of encoder + head. Returns (params, trace, final_losses)."""
    if not pairs:
        raise TrainingError("empty dataset")
    checked = []
    for idx, (mel, target) in enumerate(pairs):
        mel = np.asarray(mel, dtype=dtype)
        t_enc = -(-mel.shape[1] // config.stem_stride)
        if 2 * len(target) + 1 > t_enc:
            raise TrainingError(
                f"sample {idx}: target of {len(target)} tokens cannot align to "
                f"{t_enc} encoder frames"
            )
        checked.append((mel, tuple(target)))

    params = ContentEncoder.init_params(config, dtype=dtype, seed=seed)
    encoder = ContentEncoder(config, params)
    trainable = {k: v for k, v in params.items()
                 if not (k.endswith("bn_mean") or k.endswith("bn_var"))}
    opt = Adam(trainable, lr=lr)
    trace = []
    for step in range(steps):
        grads = {}
        stat_updates = []
        total = 0.0
        for mel, target in checked:
            logits, cache = encoder.forward_train(mel, stat_updates)
            loss, dlogits = ctc_loss(logits.T, target)
            total += loss
            encoder.backward_train((dlogits / len(checked)).T, cache, grads)
        mean_loss = total / len(checked)
        if not np.isfinite(mean_loss):
            raise TrainingError(f"non-finite loss at step {step}")
        opt.step(grads)
        for name, value in stat_updates:
            params[name][...] = value
        trace.append(float(mean_loss))

    final_losses = []
    for mel, target in checked:
        logits = encoder.asr_logits(mel)
        loss, _ = ctc_loss(logits.T, target)
        final_losses.append(float(loss))
    return params, trace, final_losses
