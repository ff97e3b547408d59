"""Command-line entry point: ``okwugbe {featurize,train,evaluate,transcribe,synth-corpus}``."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .audio import AudioError, ConfigError, save_features
from .config import RunConfig, load_config, with_overrides
from .ctc import greedy_ids
from .data import Featurizer, ManifestError, filter_dataset, load_manifest
from .model import AcousticModel
from .metrics import write_report
from .text import CharsetError, EncodeError, decode_text
from .training import CheckpointError, TrainingError, decode_entries, load_model, train
from . import autograd as ag

log = logging.getLogger("okwugbe")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
EXPECTED_ERRORS = (
    AudioError, ConfigError, ManifestError, CharsetError, EncodeError, CheckpointError, TrainingError, OSError,
)


class CommandFailed(Exception):
    """Raised after a command has reported per-item failures of its own."""


def _configure_logging() -> None:
    level_name = os.environ.get("OKWUGBE_LOG", "warn").lower()
    if level_name not in LOG_LEVELS:
        raise ConfigError(f"OKWUGBE_LOG must be one of {sorted(LOG_LEVELS)}, got {level_name!r}")
    logging.basicConfig(level=LOG_LEVELS[level_name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@contextlib.contextmanager
def _thread_limit(args):
    threads = 1 if args.deterministic else args.threads
    if threads is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=threads):
        yield


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    return with_overrides(cfg, seed=args.seed)


# -- commands ---------------------------------------------------------------
def cmd_featurize(args) -> None:
    cfg = _run_config(args)
    entries = load_manifest(args.manifest, check_audio=False)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    featurizer = Featurizer(cfg.frontend, cache=False)
    failures = 0
    with open(out_dir / "index.jsonl", "w", encoding="utf-8") as index:
        for e in entries:
            try:
                spec = featurizer(e.audio_path)
            except (AudioError, OSError, EOFError) as exc:
                print(f"{e.audio_path}: {exc}", file=sys.stderr)
                failures += 1
                continue
            name = f"{e.id}.okwf"
            save_features(out_dir / name, spec)
            rec = {"id": e.id, "features": name, "text": e.transcript, "frames": spec.n_frames}
            index.write(json.dumps(rec, ensure_ascii=False) + "\n")
    if failures:
        raise CommandFailed(f"{failures} of {len(entries)} file(s) could not be featurised")


def cmd_train(args) -> None:
    cfg = _run_config(args)
    cfg = with_overrides(
        cfg,
        epochs=args.epochs,
        train_manifest=Path(args.train_manifest) if args.train_manifest else None,
        val_manifest=Path(args.val_manifest) if args.val_manifest else None,
        out_dir=Path(args.out_dir) if args.out_dir else None,
    )
    if cfg.train_manifest is None:
        raise ConfigError("no training manifest: pass --train-manifest or set [data] train_manifest")
    if cfg.out_dir is None:
        raise ConfigError("no output directory: pass --out-dir or set [data] out_dir")
    cs = cfg.check()
    train_set = load_manifest(cfg.train_manifest)
    val_set = load_manifest(cfg.val_manifest) if cfg.val_manifest else train_set
    train_set = filter_dataset(train_set, cfg.min_duration, cfg.max_duration, cfg.max_words)
    if not train_set:
        raise ManifestError("no training utterances left after filtering")

    model = AcousticModel(cfg.model, seed=cfg.training.seed, dtype=np.float32)
    featurizer = Featurizer(cfg.frontend)

    def report(rec):
        print(f"epoch {rec.epoch} loss {rec.train_loss:.4f} val_wer {rec.val_wer:.2f} val_cer {rec.val_cer:.2f}",
              flush=True)

    result = train(model, train_set, val_set, cs, featurizer, cfg.training, cfg.out_dir, cfg.specaugment, report)
    print(f"best epoch {result.best.epoch} val_wer {result.best.val_wer:.2f} -> {cfg.out_dir / 'best'}")


def cmd_evaluate(args) -> None:
    model, cs, frontend = load_model(args.checkpoint)
    entries = load_manifest(args.manifest, check_audio=False)
    rows = []
    if args.hypotheses:
        hyps = {}
        for line in Path(args.hypotheses).read_text(encoding="utf-8").splitlines():
            if line.strip():
                key, _, text = line.partition("\t")
                hyps[key] = text
        for e in entries:
            if e.id in hyps:
                rows.append({"id": e.id, "ref": e.transcript, "hyp": hyps[e.id]})
            else:
                rows.append({"id": e.id, "ref": e.transcript, "error": "no hypothesis"})
    else:
        featurizer = Featurizer(frontend)
        for e in entries:
            try:
                hyp = decode_entries(model, [e], cs, featurizer)[0]
                rows.append({"id": e.id, "ref": e.transcript, "hyp": hyp})
            except (AudioError, OSError, EOFError, ValueError) as exc:
                rows.append({"id": e.id, "ref": e.transcript, "error": f"{type(exc).__name__}: {exc}"})
    out = open(args.out, "w", encoding="utf-8") if args.out else contextlib.nullcontext(sys.stdout)
    with out as fh:
        summary = write_report(fh, rows)
    print(f"WER {summary['wer']} CER {summary['cer']} over {summary['utterances']} utterance(s)", file=sys.stderr)
    if summary["errors"]:
        raise CommandFailed(f"{summary['errors']} utterance(s) failed; corpus rates cover the rest")


def cmd_transcribe(args) -> None:
    model, cs, frontend = load_model(args.checkpoint)
    featurizer = Featurizer(frontend, cache=False)
    failures = 0
    with ag.no_grad():
        for path in args.wav:
            try:
                spec = featurizer(path)
                log_probs, lengths = model(spec.values[None].astype(model.dtype))
                text = decode_text(greedy_ids(log_probs.data[0, : lengths[0]], cs.blank_index), cs)
            except (AudioError, OSError, EOFError, ValueError) as exc:
                print(f"{path}\tERROR: {exc}", file=sys.stderr)
                failures += 1
                continue
            print(f"{path}\t{text}", flush=True)
    if failures:
        raise CommandFailed(f"{failures} file(s) could not be transcribed")


def cmd_synth_corpus(args) -> None:
    from .synth import synth_corpus

    entries = synth_corpus(args.out_dir, args.n, args.seed if args.seed is not None else 0)
    print(f"wrote {len(entries)} utterances to {args.out_dir}")


# -- parser -------------------------------------------------------------------
def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d("fon"), help="config file or shipped name (fon, igbo, synthetic)")
    p.add_argument("--seed", type=int, default=d(None), help="override the training / generator seed")
    p.add_argument("--deterministic", action="store_true", default=d(False),
                   help="single-threaded numerics for reproducible runs")
    p.add_argument("--threads", type=int, default=d(None), metavar="N", help="limit BLAS threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="okwugbe",
        description="Train and run a CTC speech recogniser for low-resource languages.",
        epilog="Set OKWUGBE_LOG to error, warn, info or debug to control log verbosity.",
    )
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("featurize", cmd_featurize, "write one feature file per manifest entry plus index.jsonl")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)

    p = add("train", cmd_train, "train a model; writes history.jsonl and checkpoints to the run directory")
    p.add_argument("--train-manifest")
    p.add_argument("--val-manifest", help="defaults to the training manifest")
    p.add_argument("--out-dir", help="run directory")
    p.add_argument("--epochs", type=int, help="override the configured epoch budget")

    p = add("evaluate", cmd_evaluate, "score a checkpoint on a manifest (JSON-lines WER/CER report)")
    p.add_argument("--checkpoint", required=True, help="checkpoint or run directory")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="report path (default: standard output)")
    p.add_argument("--hypotheses", help="score 'id<TAB>text' lines instead of decoding audio")

    p = add("transcribe", cmd_transcribe, "greedy-decode WAV files; prints path<TAB>transcript")
    p.add_argument("--checkpoint", required=True, help="checkpoint or run directory")
    p.add_argument("wav", nargs="+")

    p = add("synth-corpus", cmd_synth_corpus, "generate a synthetic tone corpus with manifest and charset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, required=True, help="number of utterances")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _configure_logging()
        if args.command == "synth-corpus" and args.n < 1:
            raise ConfigError("--n must be >= 1")
        with _thread_limit(args):
            args.func(args)
    except CommandFailed as exc:
        print(f"okwugbe {args.command}: {exc}", file=sys.stderr)
        return 1
    except EXPECTED_ERRORS as exc:
        print(f"okwugbe {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"okwugbe {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
