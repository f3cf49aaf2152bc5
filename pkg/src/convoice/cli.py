"""Command-line interface: a thin local client over the core package.

Subcommands mirror the engine's surfaces: ``convert``, ``embed``, ``bench``,
``train {decoder,speaker,asr}``, ``init-toy``, and ``serve`` (runs the HTTP
service). Usage errors exit 2 (argparse); pipeline failures print the failing
stage and exit 1. ``CONVOICE_THREADS`` caps kernel threads for every command.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

__all__ = ["main"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convoice",
                                     description="Frame-by-frame zero-shot voice conversion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a source utterance to a target voice")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True,
                   help="comma-separated reference WAVs of the target speaker")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-mel", default=None, help="write the predicted mel as a sidecar")
    p.add_argument("--gl-iters", type=int, default=60)

    p = sub.add_parser("embed", help="compute a speaker embedding")
    p.add_argument("--audio", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("binary", "text"), default="binary",
                   help="binary: 256 little-endian float32; text: one float per line")

    p = sub.add_parser("bench", help="latency / RTF benchmark (no vocoding)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory of WAV files")
    p.add_argument("--batch-sizes", default="1,4,8")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--report", required=True)

    p = sub.add_parser("train", help="desk-scale trainers on synthetic data")
    p.add_argument("task", choices=("decoder", "speaker", "asr"))
    p.add_argument("--config", required=True, help="JSON file of trainer settings")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="loss trace CSV (default: <out>.loss.csv)")

    p = sub.add_parser("init-toy", help="write a seeded random toy checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from threadpoolctl import threadpool_limits

    from .pipeline import PipelineError

    env_threads = os.environ.get("CONVOICE_THREADS")
    limits = int(env_threads) if env_threads else None
    try:
        with threadpool_limits(limits=limits):
            return _dispatch(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # checkpoint/format/training errors
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "convert":
        return _cmd_convert(args)
    if args.command == "embed":
        return _cmd_embed(args)
    if args.command == "bench":
        return _cmd_bench(args)
    if args.command == "train":
        return _cmd_train(args)
    if args.command == "init-toy":
        return _cmd_init_toy(args)
    if args.command == "serve":
        return _cmd_serve(args)
    raise AssertionError(f"unhandled command {args.command}")


def _cmd_convert(args) -> int:
    from .checkpoint import load_bundle, save_tensor
    from .frontend import load_wav, save_wav
    from .pipeline import ConversionEngine
    from .vocoder import GriffinLimConfig

    bundle = load_bundle(args.checkpoint)
    engine = ConversionEngine(bundle)
    source = load_wav(args.source)
    refs = [load_wav(p) for p in args.target.split(",") if p]
    gl = GriffinLimConfig(n_iters=args.gl_iters, frontend=bundle.encoder_frontend)
    wave, mel = engine.convert(source, refs, gl)
    save_wav(args.out, wave)
    if args.emit_mel:
        save_tensor(args.emit_mel, "mel", mel.values.astype(np.float32))
    print(f"wrote {args.out}: {len(wave.samples)} samples at {wave.sample_rate_hz} Hz "
          f"({mel.n_frames} mel frames)")
    return 0


def _cmd_embed(args) -> int:
    from .checkpoint import load_bundle
    from .frontend import load_wav
    from .pipeline import ConversionEngine

    engine = ConversionEngine(load_bundle(args.checkpoint))
    emb = engine.embed(load_wav(args.audio))
    if args.format == "binary":
        with open(args.out, "wb") as fh:
            fh.write(emb.astype("<f4").tobytes())
    else:
        with open(args.out, "w") as fh:
            fh.writelines(f"{v:.9g}\n" for v in emb)
    print(f"wrote {args.out}: {emb.shape[0]}-d embedding, norm {np.linalg.norm(emb):.6f}")
    return 0


def _cmd_bench(args) -> int:
    from .bench import bench
    from .checkpoint import load_bundle

    batch_sizes = [int(b) for b in args.batch_sizes.split(",") if b]
    reports = bench(
        load_bundle(args.checkpoint), args.data, batch_sizes,
        warmup=args.warmup, reps=args.reps, threads=args.threads,
    )
    payload = [r.to_dict() for r in reports]
    with open(args.report, "w") as fh:
        json.dump(payload, fh, indent=2)
    for r in reports:
        print(f"batch {r.batch_size}: latency {r.mean_latency_s * 1e3:.2f} ms "
              f"(std {r.latency_std_s * 1e3:.2f}), RTF {r.rtf:.1f}")
    return 0


def _cmd_train(args) -> int:
    with open(args.config) as fh:
        cfg = json.load(fh)
    trace_path = args.trace or f"{args.out}.loss.csv"
    if args.task == "decoder":
        trace = _train_decoder(args, cfg)
    elif args.task == "speaker":
        trace = _train_speaker(args, cfg)
    else:
        trace = _train_asr(args, cfg)
    with open(trace_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        writer.writerows((i, f"{v:.9g}") for i, v in enumerate(trace))
    print(f"wrote {args.out} and {trace_path} ({len(trace)} steps)")
    return 0


def _train_decoder(args, cfg):
    from .checkpoint import load_bundle, save_bundle
    from .pipeline import init_toy_bundle
    from .training import make_toy_voice_dataset, train_decoder_toy

    base = (load_bundle(cfg["base_checkpoint"]) if cfg.get("base_checkpoint")
            else init_toy_bundle(seed=cfg.get("seed", 0), dtype=np.float64))
    dataset = make_toy_voice_dataset(
        cfg.get("n_utterances", 20), seed=cfg.get("seed", 0),
        duration_s=cfg.get("duration_s", 0.6),
    )
    bundle, trace = train_decoder_toy(
        base, dataset, steps=cfg.get("steps", 200), lr=cfg.get("lr", 1e-3)
    )
    save_bundle(args.out, bundle)
    return trace


def _train_speaker(args, cfg):
    from dataclasses import asdict as dc_asdict

    from .checkpoint import save_tensors
    from .speaker_encoder import TOY_SPEAKER_CONFIG
    from .training import SyntheticSpeakerSet, train_speaker_toy

    sset = SyntheticSpeakerSet(
        n_speakers=cfg.get("n_speakers", 6),
        utterances_per_speaker=cfg.get("utterances_per_speaker", 4),
        seed=cfg.get("seed", 0),
        jitter=cfg.get("jitter", 0.15),
    )
    params, trace, report = train_speaker_toy(
        sset, steps=cfg.get("steps", 80), lr=cfg.get("lr", 5e-3), seed=cfg.get("seed", 0)
    )
    save_tensors(args.out, params, configs={"speaker": dc_asdict(TOY_SPEAKER_CONFIG)})
    print(f"held-out similarity: intra {report.intra:.3f}, inter {report.inter:.3f}, "
          f"margin {report.margin:.3f}")
    return trace


def _train_asr(args, cfg):
    from dataclasses import asdict as dc_asdict

    from .checkpoint import save_tensors
    from .content_encoder import TOY_ENCODER_CONFIG
    from .training import make_toy_asr_pair, train_asr_toy

    pairs = [
        make_toy_asr_pair(seed=cfg.get("seed", 0) + i, frames=cfg.get("frames", 50),
                          n_tokens=cfg.get("n_tokens", 3))
        for i in range(cfg.get("n_pairs", 1))
    ]
    params, trace, finals = train_asr_toy(
        pairs, steps=cfg.get("steps", 300), lr=cfg.get("lr", 3e-3), seed=cfg.get("seed", 0)
    )
    save_tensors(args.out, params, configs={"encoder": dc_asdict(TOY_ENCODER_CONFIG)})
    print("final per-sample losses:", " ".join(f"{v:.4f}" for v in finals))
    return trace


def _cmd_init_toy(args) -> int:
    from .checkpoint import save_bundle
    from .pipeline import init_toy_bundle

    bundle = init_toy_bundle(seed=args.seed)
    save_bundle(args.out, bundle)
    n_params = sum(v.size for v in bundle.params.values())
    print(f"wrote {args.out} ({n_params} tensor values, seed {args.seed})")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    app = create_app(checkpoint_path=args.checkpoint)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
