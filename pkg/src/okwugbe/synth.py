"""Synthetic tone corpus: every letter is a distinct tone, words are silence-separated tone runs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, write_wav
from .data import ManifestEntry, write_manifest
from .text import BLANK_TOKEN

LETTERS = "abcdef"
# base frequency (Hz) and chirp sweep (Hz over the tone) per letter
TONES = {
    "a": (400.0, 0.0),
    "b": (700.0, 150.0),
    "c": (1100.0, 0.0),
    "d": (1600.0, -200.0),
    "e": (2200.0, 0.0),
    "f": (2900.0, 250.0),
}


@dataclass(frozen=True)
class SynthConfig:
    sample_rate: int = 8000
    letter_s: float = 0.16
    letter_gap_s: float = 0.05
    word_gap_s: float = 0.16
    edge_s: float = 0.08
    min_words: int = 2
    max_words: int = 3
    min_letters: int = 1
    max_letters: int = 2
    amplitude: float = 0.5
    noise: float = 0.003


def tone(letter: str, cfg: SynthConfig) -> np.ndarray:
    """Hann-tapered tone (or linear chirp) for one letter."""
    f0, sweep = TONES[letter]
    n = int(round(cfg.letter_s * cfg.sample_rate))
    t = np.arange(n) / cfg.sample_rate
    phase = 2 * np.pi * (f0 * t + 0.5 * (sweep / cfg.letter_s) * t * t)
    return cfg.amplitude * np.hanning(n) ** 0.25 * np.sin(phase)


def _silence(seconds: float, cfg: SynthConfig) -> np.ndarray:
    return np.zeros(int(round(seconds * cfg.sample_rate)))


def render(transcript: str, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    parts = [_silence(cfg.edge_s, cfg)]
    for wi, word in enumerate(transcript.split(" ")):
        if wi:
            parts.append(_silence(cfg.word_gap_s, cfg))
        for li, letter in enumerate(word):
            if li:
                parts.append(_silence(cfg.letter_gap_s, cfg))
            parts.append(tone(letter, cfg))
    parts.append(_silence(cfg.edge_s, cfg))
    x = np.concatenate(parts)
    return x + cfg.noise * rng.standard_normal(x.size)


def random_transcript(rng: np.random.Generator, cfg: SynthConfig) -> str:
    n_words = int(rng.integers(cfg.min_words, cfg.max_words + 1))
    words = []
    for _ in range(n_words):
        n = int(rng.integers(cfg.min_letters, cfg.max_letters + 1))
        words.append("".join(LETTERS[i] for i in rng.integers(0, len(LETTERS), n)))
    return " ".join(words)


def synth_corpus(out_dir: str | Path, n: int, seed: int = 0, cfg: SynthConfig = SynthConfig()) -> list[ManifestEntry]:
    """Write ``n`` WAVs, ``manifest.jsonl`` and ``charset.txt`` into ``out_dir``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n):
        text = random_transcript(rng, cfg)
        samples = np.clip(render(text, cfg, rng), -1.0, 1.0)
        path = out_dir / "wav" / f"utt{i:04d}.wav"
        write_wav(path, Waveform(samples, cfg.sample_rate))
        entries.append(ManifestEntry(path, text, round(samples.size / cfg.sample_rate, 6), f"utt{i:04d}"))
    write_manifest(out_dir / "manifest.jsonl", entries, relative_to=out_dir)
    (out_dir / "charset.txt").write_text("\n".join([BLANK_TOKEN, " ", *LETTERS]) + "\n", encoding="utf-8")
    return entries
