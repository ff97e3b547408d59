"""Manifests, dataset filtering and splitting, featurisation and batch collation."""

from __future__ import annotations

import json
import logging
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .audio import (
    FrontendConfig,
    MelSpectrogram,
    SpecAugmentConfig,
    build_mel_filterbank,
    mel_spectrogram,
    read_wav,
    resample,
    spec_augment,
)
from .ctc import min_alignable_length
from .text import CharSet, EncodeError, encode, normalize_text

log = logging.getLogger(__name__)

# train / validation / test sizes of the Fon corpus, used as default split ratios
FON_SPLIT = (8235, 1500, 669)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: Path
    transcript: str
    duration_s: float | None = None
    id: str = ""

    def duration(self) -> float:
        if self.duration_s is not None:
            return self.duration_s
        return wav_duration(self.audio_path)


def wav_duration(path: str | Path) -> float:
    with wave.open(str(path), "rb") as fh:
        return fh.getnframes() / fh.getframerate()


def load_manifest(path: str | Path, check_audio: bool = True) -> list[ManifestEntry]:
    """Parse a JSON-lines manifest: ``{"audio_path": ..., "text": ..., "duration": ...}``.

    Relative audio paths resolve against the manifest's directory.  Transcripts
    are normalised.  Blank lines are ignored.
    """
    path = Path(path)
    base = path.parent
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise ManifestError(f"{path}:{lineno}: expected an object")
        for key in ("audio_path", "text"):
            if not isinstance(rec.get(key), str):
                raise ManifestError(f"{path}:{lineno}: missing or non-string field {key!r}")
        text = normalize_text(rec["text"])
        if not text:
            raise ManifestError(f"{path}:{lineno}: transcript is empty after normalisation")
        duration = rec.get("duration")
        if duration is not None and not isinstance(duration, (int, float)):
            raise ManifestError(f"{path}:{lineno}: duration must be a number")
        audio = Path(rec["audio_path"])
        if not audio.is_absolute():
            audio = base / audio
        uid = str(rec.get("id") or Path(rec["audio_path"]).stem)
        entries.append(ManifestEntry(audio, text, None if duration is None else float(duration), uid))
    if check_audio:
        missing = [str(e.audio_path) for e in entries if not e.audio_path.exists()]
        if missing:
            raise ManifestError(f"{path}: {len(missing)} audio file(s) missing: " + ", ".join(missing))
    return entries


def write_manifest(path: str | Path, entries: Sequence[ManifestEntry], relative_to: Path | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            audio = e.audio_path
            if relative_to is not None:
                audio = audio.relative_to(relative_to)
            rec = {"id": e.id, "audio_path": str(audio), "text": e.transcript}
            if e.duration_s is not None:
                rec["duration"] = e.duration_s
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def filter_dataset(
    entries: Sequence[ManifestEntry],
    min_dur_s: float = 0.0,
    max_dur_s: float = math.inf,
    max_words: float = math.inf,
) -> list[ManifestEntry]:
    """Keep entries with ``min_dur_s <= duration <= max_dur_s`` and at most ``max_words`` words."""
    kept = []
    for e in entries:
        if len(e.transcript.split()) > max_words:
            continue
        if min_dur_s > 0 or max_dur_s < math.inf:
            if not min_dur_s <= e.duration() <= max_dur_s:
                continue
        kept.append(e)
    return kept


def split_dataset(
    entries: Sequence[ManifestEntry], proportions: Sequence[float] = FON_SPLIT, seed: int = 0
) -> list[list[ManifestEntry]]:
    """Shuffle deterministically and cut into parts sized by ``proportions``.

    Sizes are floor-allocated with the remainder going to the largest
    fractional parts, so they always sum to ``len(entries)``.
    """
    total = float(sum(proportions))
    if total <= 0 or any(p < 0 for p in proportions):
        raise ValueError(f"invalid split proportions {proportions}")
    n = len(entries)
    raw = [n * p / total for p in proportions]
    sizes = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    perm = np.random.default_rng(seed).permutation(n)
    parts, start = [], 0
    for size in sizes:
        parts.append([entries[i] for i in perm[start : start + size]])
        start += size
    return parts


class Featurizer:
    """Waveform -> mel features under one frontend config, with an in-memory cache."""

    def __init__(self, cfg: FrontendConfig, cache: bool = True):
        self.cfg = cfg
        self.filterbank = build_mel_filterbank(cfg)
        self._cache: dict[Path, MelSpectrogram] | None = {} if cache else None

    def from_waveform(self, w) -> MelSpectrogram:
        if w.sample_rate != self.cfg.sample_rate:
            w = resample(w, self.cfg.sample_rate)
        return mel_spectrogram(w, self.cfg, self.filterbank)

    def __call__(self, path: str | Path) -> MelSpectrogram:
        path = Path(path)
        if self._cache is not None and path in self._cache:
            return self._cache[path]
        spec = self.from_waveform(read_wav(path))
        if self._cache is not None:
            self._cache[path] = spec
        return spec


@dataclass
class Batch:
    features: np.ndarray  # (B, n_mels, T_max), zero beyond each length
    feature_lengths: np.ndarray
    labels: list[list[int]]
    label_lengths: np.ndarray
    ids: list[str]
    transcripts: list[str]
    infeasible: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return self.features.shape[0]

    def unpadded(self, i: int) -> np.ndarray:
        return self.features[i, :, : self.feature_lengths[i]]


def collate(
    entries: Sequence[ManifestEntry],
    cs: CharSet,
    featurizer: Featurizer,
    stem_stride: int = 1,
    augment: SpecAugmentConfig | None = None,
    rng: np.random.Generator | None = None,
    dtype=np.float32,
) -> Batch:
    """Featurise, encode and zero-pad a list of utterances in order.

    Utterances whose label sequence cannot be aligned within the frames left
    after the stem's stride are listed in ``Batch.infeasible``.
    """
    if not entries:
        raise ValueError("cannot collate an empty batch")
    specs, labels = [], []
    for e in entries:
        try:
            labels.append(encode(e.transcript, cs))
        except EncodeError as exc:
            raise EncodeError(f"utterance {e.id!r}: {exc}") from None
        spec = featurizer(e.audio_path)
        if augment is not None:
            spec = spec_augment(spec, augment, rng)
        specs.append(spec.values)
    lengths = np.array([s.shape[1] for s in specs], dtype=np.int64)
    feats = np.zeros((len(specs), specs[0].shape[0], int(lengths.max())), dtype=dtype)
    for i, s in enumerate(specs):
        feats[i, :, : s.shape[1]] = s
    infeasible = [
        i for i, (lab, n) in enumerate(zip(labels, lengths)) if min_alignable_length(lab) > math.ceil(n / stem_stride)
    ]
    return Batch(
        features=feats,
        feature_lengths=lengths,
        labels=labels,
        label_lengths=np.array([len(x) for x in labels], dtype=np.int64),
        ids=[e.id for e in entries],
        transcripts=[e.transcript for e in entries],
        infeasible=infeasible,
    )


def iterate_batches(
    entries: Sequence[ManifestEntry], batch_size: int, rng: np.random.Generator | None = None
) -> Iterator[list[ManifestEntry]]:
    order = np.arange(len(entries)) if rng is None else rng.permutation(len(entries))
    for start in range(0, len(entries), batch_size):
        yield [entries[i] for i in order[start : start + batch_size]]
