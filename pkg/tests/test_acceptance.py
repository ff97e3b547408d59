"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line with the measured quantity and its
tolerance; the lines are repeated in the pytest terminal summary.
"""

import contextlib
import io
import itertools
import json
import math
import time

import numpy as np

from okwugbe.audio import (
    WINDOWS,
    FrontendConfig,
    Waveform,
    build_mel_filterbank,
    frame_signal,
    hertz_to_mel,
    mel_spectrogram,
    mel_to_hertz,
    power_spectrum,
)
from okwugbe.autograd import Tensor
from okwugbe.cli import main
from okwugbe.ctc import ctc_loss, ctc_loss_batch
from okwugbe.data import Featurizer, collate, load_manifest
from okwugbe.metrics import cer, levenshtein, wer
from okwugbe.model import AcousticModel, AttentionHead, ModelConfig, RCNNBlock, attention_apply, attention_scores
from okwugbe.model import pad_hidden_state
from okwugbe.text import graphemes
from okwugbe.training import (
    AdamWState,
    EarlyStopping,
    NesterovState,
    adamw_step,
    load_model,
    nesterov_step,
)
from gradcheck import check_op, primitive_cases, tiny_model_gradcheck
from oracles import ctc_brute_force, edit_distance, random_log_probs, resolvable_filters


def test_ctc_matches_brute_force(criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, n, infeasible_agree = 0.0, 1000, True
    for _ in range(n):
        T, C, L = int(rng.integers(1, 7)), int(rng.integers(2, 5)), int(rng.integers(0, 4))
        labels = rng.integers(1, C, size=L).tolist()
        lp = random_log_probs(rng, T, C)
        dp, bf = ctc_loss(lp, labels), ctc_brute_force(lp, labels)
        if math.isinf(bf):
            infeasible_agree &= dp == math.inf
        else:
            worst = max(worst, abs(dp - bf))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and infeasible_agree and elapsed < 30
    criterion(1, "CTC DP vs brute force", ok,
              f"{n} instances, max |diff| {worst:.2e} (< 1e-9), {elapsed:.1f} s (< 30 s)")


def test_ctc_completeness(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for T in range(1, 5):
        for _ in range(5):
            lp = random_log_probs(rng, T, 3)
            total = sum(
                math.exp(-ctc_loss(lp, list(labels)))
                for L in range(T + 1)
                for labels in itertools.product([1, 2], repeat=L)
            )
            worst = max(worst, abs(total - 1.0))
    criterion(2, "CTC completeness", worst < 1e-9, f"T = 1..4, C = 3, max |sum - 1| {worst:.2e} (< 1e-9)")


def test_gradient_suite(criterion):
    start = time.perf_counter()
    errors = {name: check_op(fn, *arrays) for name, fn, arrays in primitive_cases()}
    prim_name = max(errors, key=errors.get)
    e2e = tiny_model_gradcheck()
    elapsed = time.perf_counter() - start
    ok = errors[prim_name] < 1e-4 and e2e < 1e-3 and elapsed < 120
    criterion(3, "gradient suite", ok,
              f"{len(errors)} primitives, worst {errors[prim_name]:.1e} ({prim_name}, < 1e-4); "
              f"end-to-end {e2e:.1e} (< 1e-3); {elapsed:.0f} s (< 120 s)")


def test_mel_formula(criterion):
    at700 = abs(hertz_to_mel(700.0) / (2595 * math.log10(2)) - 1.0)
    f = np.concatenate([np.linspace(1.0, 24000.0, 20001), np.geomspace(1.0, 24000.0, 1001)])
    round_trip = float(np.max(np.abs(mel_to_hertz(hertz_to_mel(f)) / f - 1.0)))
    ok = at700 < 1e-9 and round_trip < 1e-9
    criterion(4, "mel formula", ok, f"rel err at 700 Hz {at700:.1e}, round trip on [1, 24000] {round_trip:.1e} (< 1e-9)")


def test_dsp_sanity(criterion):
    rng = np.random.default_rng(11)
    worst_parseval, hits, tried = 0.0, 0, 0
    for cfg in (FrontendConfig(16000, 512, 512, 128), FrontendConfig(8000, 512, 512, 64)):
        window = WINDOWS[cfg.window](cfg.n_fft)
        frames = frame_signal(rng.normal(size=cfg.sample_rate), cfg.n_fft, cfg.hop_length)
        P = power_spectrum(frames, window)
        spectral = (P[:, 0] + P[:, -1] + 2 * P[:, 1:-1].sum(axis=1)) / cfg.n_fft
        timed = np.sum((frames * window) ** 2, axis=1)
        worst_parseval = max(worst_parseval, float(np.max(np.abs(spectral - timed) / timed)))

        fb = build_mel_filterbank(cfg)
        t = np.arange(cfg.sample_rate) / cfg.sample_rate
        for m in rng.choice(resolvable_filters(cfg, fb), size=20, replace=False):
            x = 0.5 * np.sin(2 * np.pi * fb.center_freqs_hz[m] * t)
            s = mel_spectrogram(Waveform(x, cfg.sample_rate), cfg, fb)
            hits += int(np.argmax(s.values.mean(axis=1))) == m
            tried += 1
    ok = worst_parseval < 1e-6 and hits == tried
    criterion(5, "DSP sanity", ok,
              f"Parseval max rel err {worst_parseval:.1e} (< 1e-6); sine in expected mel bin {hits}/{tried} "
              "(20 per config at 16k/128 and 8k/64)")


def test_architectural_invariants(criterion):
    rng = np.random.default_rng(3)
    block = RCNNBlock(3, 8, (3, 3), 0.1, rng, np.float64)
    for p in block.parameters():
        p.data[...] = 0.0
    x = rng.normal(size=(2, 3, 8, 9))
    identity = bool(np.array_equal(block(Tensor(x)).data, x))

    model = AcousticModel(ModelConfig(n_mels=16, charset_size=5, n_rcnn_blocks=2, n_rnn_blocks=2,
                                      cnn_channels=4, rnn_hidden=6)).eval()
    model(rng.normal(size=(3, 16, 20)), lengths=[20, 14, 9])
    sums = max(float(np.max(np.abs(w.data.sum(axis=-1) - 1.0))) for w in model.attention_weights())

    head = AttentionHead(8, rng, np.float64)
    feats = Tensor(rng.normal(size=(2, 6, 8)))
    hidden = Tensor(rng.normal(size=(2, 2, 4)))
    padded = attention_scores(feats, pad_hidden_state(hidden, 6), head).data
    bare = attention_scores(feats, Tensor(np.zeros((2, 6, 4))), head).data
    neutral = float(np.max(np.abs(padded[:, 2:] - bare[:, 2:])))
    out, _ = attention_apply(feats, hidden, head)
    doubled = out.shape[-1] == 2 * feats.shape[-1]

    ok = identity and sums < 1e-6 and neutral < 1e-12 and doubled
    criterion(6, "architectural invariants", ok,
              f"rCNN zero-weight identity exact: {identity}; attention sums max err {sums:.1e} (< 1e-6); "
              f"padding neutrality {neutral:.1e} (< 1e-12); output dim {out.shape[-1]} = 2 x {feats.shape[-1]}")


def test_metrics_oracle(criterion):
    rng = np.random.default_rng(5)
    vocab = ["a", "e", "o", "ɔ́", "ɛ̀", "kp", "gb", " "]
    sample = lambda: "".join(rng.choice(vocab, size=rng.integers(0, 10))).strip()  # noqa: E731
    mismatches = 0
    for _ in range(100):
        ref, hyp = sample() or "a", sample()
        w, c = wer(ref, hyp), cer(ref, hyp)
        mismatches += w.distance != edit_distance(ref.split(), hyp.split())
        mismatches += c.distance != edit_distance(graphemes(ref), graphemes(hyp))
        mismatches += w.reference_length != len(ref.split()) or c.reference_length != len(graphemes(ref))
    violations = 0
    for _ in range(1000):
        a, b, c = (rng.integers(0, 3, size=rng.integers(0, 7)).tolist() for _ in range(3))
        dab, dba, dbc, dac = levenshtein(a, b), levenshtein(b, a), levenshtein(b, c), levenshtein(a, c)
        violations += dab != dba or (dab == 0) != (a == b) or dac > dab + dbc or dab < 0
    ok = mismatches == 0 and violations == 0
    criterion(7, "metrics oracle", ok, f"{mismatches} mismatches on 100 pairs; {violations} axiom violations on 1000 triples")


def _run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


def test_overfit_smoke(criterion, tmp_path):
    corpus, run_dir = tmp_path / "corpus", tmp_path / "run"
    code, _, err = _run_cli(["synth-corpus", "--out-dir", str(corpus), "--n", "5"])
    assert code == 0, err
    manifest = corpus / "manifest.jsonl"
    start = time.perf_counter()
    code, _, err = _run_cli(["--config", "synthetic", "train", "--train-manifest", str(manifest),
                             "--out-dir", str(run_dir)])
    elapsed = time.perf_counter() - start
    assert code == 0, err
    history = [json.loads(x) for x in (run_dir / "history.jsonl").read_text().splitlines()]
    final = history[-1]

    model, cs, frontend = load_model(run_dir)
    entries = load_manifest(manifest)
    batch = collate(entries, cs, Featurizer(frontend), model.config.stem_stride)
    log_probs, lengths = model(batch.features, batch.feature_lengths)
    eval_loss, _ = ctc_loss_batch(log_probs, batch.labels, lengths)

    wavs = [str(e.audio_path) for e in entries]
    code, out, err = _run_cli(["transcribe", "--checkpoint", str(run_dir), *wavs])
    assert code == 0, err
    hyps = dict(line.split("\t", 1) for line in out.splitlines())
    exact = sum(hyps[str(e.audio_path)] == e.transcript for e in entries)

    cfg = model.config
    reduced = (cfg.n_rcnn_blocks, cfg.n_rnn_blocks, cfg.rnn_hidden) == (2, 1, 32) and len(cs) <= 8
    ok = (reduced and final["val_wer"] == 0.0 and final["train_loss"] < 0.1 and final["steps"] <= 2000
          and elapsed < 600 and exact == len(entries))
    criterion(8, "overfit smoke test", ok,
              f"N=2 M=1 hidden=32 charset {len(cs)}; train WER {final['val_wer']:.1f}% and CTC loss "
              f"{final['train_loss']:.3f} (< 0.1) after {final['steps']} steps (<= 2000) in {elapsed:.0f} s (< 600 s); "
              f"best checkpoint eval-mode loss {eval_loss.item():.3f}; transcribe exact {exact}/{len(entries)}")


def test_determinism(criterion, tmp_path):
    corpus = tmp_path / "corpus"
    assert _run_cli(["synth-corpus", "--out-dir", str(corpus), "--n", "5"])[0] == 0
    runs = []
    for name in ("a", "b"):
        code, _, err = _run_cli(["--config", "synthetic", "--deterministic", "--seed", "7", "train", "--epochs", "3",
                                 "--train-manifest", str(corpus / "manifest.jsonl"), "--out-dir", str(tmp_path / name)])
        assert code == 0, err
        root = tmp_path / name
        runs.append({str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    a, b = runs
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differing and "history.jsonl" in a and any(k.endswith("model.okwp") for k in a)
    criterion(9, "determinism", ok,
              f"{len(a)} files compared byte for byte (history and checkpoints); differing: {differing or 'none'}")


def test_optimizer_hand_examples(criterion):
    errs = []
    theta = [np.array([1.0])]
    state = AdamWState.zeros_like(theta, weight_decay=0.0)
    adamw_step(theta, [np.array([1.0])], state, lr=0.1)
    errs.append(abs(theta[0][0] - (1.0 - 0.1 / (1.0 + 1e-8))))
    adamw_step(theta, [np.array([-1.0])], state, lr=0.1)
    m = (0.9 * 0.1 - 0.1) / (1 - 0.9**2)
    v = (0.999 * 0.001 + 0.001) / (1 - 0.999**2)
    errs.append(abs(theta[0][0] - (1.0 - 0.1 / (1.0 + 1e-8) - 0.1 * m / (math.sqrt(v) + 1e-8))))
    theta = [np.array([2.0])]
    state = AdamWState.zeros_like(theta, weight_decay=0.01)
    adamw_step(theta, [np.array([0.0])], state, lr=0.1)
    errs.append(abs(theta[0][0] - 2.0 * (1 - 0.001)))

    theta = [np.array([0.0])]
    nstate = NesterovState.zeros_like(theta, momentum=0.9)
    nesterov_step(theta, [np.array([1.0])], nstate, lr=0.1)
    errs += [abs(nstate.velocity[0][0] + 0.1), abs(theta[0][0] + 0.1)]
    nesterov_step(theta, [np.array([1.0])], nstate, lr=0.1)
    errs += [abs(nstate.velocity[0][0] + 0.19), abs(theta[0][0] + 0.29)]

    es = EarlyStopping(3)
    fired = [es.update(x) for x in [10.0, 8.0, 8.0, 9.0, 8.5, 7.0]]
    stops_at = fired.index(True) + 1 if True in fired else None
    ok = max(errs) < 1e-12 and stops_at == 5
    criterion(10, "optimizer checks", ok,
              f"AdamW/Nesterov max err {max(errs):.1e} (< 1e-12); early stopping fired at epoch {stops_at} "
              "after 3 stagnant epochs (expected 5)")
