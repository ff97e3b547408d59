"""Waveform handling and narrow-band mel-spectrogram features."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


class AudioError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise AudioError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _hann(n: int) -> np.ndarray:
    # periodic Hann
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


WINDOWS = {
    "hann": _hann,
    "rectangular": lambda n: np.ones(n),
}


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate: int = 16000
    n_fft: int = 512
    hop_length: int = 512
    n_mels: int = 128
    window: str = "hann"
    log_compress: bool = True

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.n_fft <= 0:
            raise ConfigError("n_fft must be positive")
        if not 0 < self.hop_length <= self.n_fft:
            raise ConfigError(f"hop_length must be in (0, n_fft], got {self.hop_length}")
        if not 0 < self.n_mels <= self.n_fft // 2 + 1:
            raise ConfigError(f"n_mels must be in (0, n_fft/2 + 1], got {self.n_mels}")
        if self.window not in WINDOWS:
            raise ConfigError(f"unknown window {self.window!r}; choose from {sorted(WINDOWS)}")

    @property
    def n_freqs(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop_length


FON_FRONTEND = FrontendConfig(sample_rate=16000, n_fft=512, hop_length=512, n_mels=128)
IGBO_FRONTEND = FrontendConfig(sample_rate=8000, n_fft=512, hop_length=512, n_mels=64)


# -- mel scale ---------------------------------------------------------------
def hertz_to_mel(f):
    """m = 2595 log10(1 + f / 700)."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    # log1p keeps low frequencies distinct where 1 + f/700 would round to 1
    out = (2595.0 / np.log(10.0)) * np.log1p(f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hertz(m):
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("mel value must be non-negative")
    out = 700.0 * np.expm1(m * (np.log(10.0) / 2595.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # (n_mels, n_fft // 2 + 1)
    center_freqs_hz: np.ndarray
    edge_freqs_hz: np.ndarray  # (n_mels + 2,)


def build_mel_filterbank(cfg: FrontendConfig) -> MelFilterbank:
    """Triangular filters with peak 1, centres evenly spaced in mel up to Nyquist.

    A filter too narrow to contain any FFT bin is given the single bin nearest
    its centre.  If that bin is already covered by another filter the bank
    cannot resolve ``n_mels`` bands at this FFT size and ``ConfigError`` is raised.
    """
    nyquist = cfg.sample_rate / 2.0
    edges = mel_to_hertz(np.linspace(0.0, hertz_to_mel(nyquist), cfg.n_mels + 2))
    bins = np.arange(cfg.n_freqs) * cfg.sample_rate / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lo) / (mid - lo)
    falling = (hi - bins[None, :]) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(weights.max(axis=1) <= 0.0)
    if empty.size:
        covered = weights.sum(axis=0) > 0
        for m in empty:
            k = int(np.argmin(np.abs(bins - edges[m + 1])))
            if covered[k]:
                raise ConfigError(
                    f"n_mels={cfg.n_mels} too large for n_fft={cfg.n_fft}: "
                    f"filter {m} has no FFT bin of its own"
                )
            weights[m, k] = 1.0
            covered[k] = True
    return MelFilterbank(weights=weights, center_freqs_hz=edges[1:-1].copy(), edge_freqs_hz=edges)


# -- spectrogram ---------------------------------------------------------------
@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # (n_mels, n_frames)
    frame_rate: float

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def frame_signal(samples: np.ndarray, n_fft: int, hop_length: int) -> np.ndarray:
    """(n_frames, n_fft) frames starting at sample 0; a short tail is zero-padded to one frame."""
    if samples.shape[0] < n_fft:
        samples = np.pad(samples, (0, n_fft - samples.shape[0]))
    n_frames = (samples.shape[0] - n_fft) // hop_length + 1
    return np.lib.stride_tricks.sliding_window_view(samples, n_fft)[::hop_length][:n_frames]


def power_spectrum(frames: np.ndarray, window: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(frames * window, axis=-1)
    return spec.real**2 + spec.imag**2


def mel_spectrogram(w: Waveform, cfg: FrontendConfig, fb: MelFilterbank | None = None) -> MelSpectrogram:
    if w.sample_rate != cfg.sample_rate:
        raise AudioError(f"waveform sample rate {w.sample_rate} != config {cfg.sample_rate}")
    if len(w) < 1:
        raise AudioError("empty waveform")
    if fb is None:
        fb = build_mel_filterbank(cfg)
    frames = frame_signal(w.samples, cfg.n_fft, cfg.hop_length)
    power = power_spectrum(frames, WINDOWS[cfg.window](cfg.n_fft))
    mel = fb.weights @ power.T
    if cfg.log_compress:
        mel = np.log(mel + 1e-10)
    return MelSpectrogram(values=mel, frame_rate=cfg.frame_rate)


def n_frames_for(n_samples: int, cfg: FrontendConfig) -> int:
    if n_samples < cfg.n_fft:
        return 1
    return (n_samples - cfg.n_fft) // cfg.hop_length + 1


# -- augmentation --------------------------------------------------------------
@dataclass(frozen=True)
class SpecAugmentConfig:
    max_freq_mask_width: int = 0
    max_time_mask_width: int = 0
    n_freq_masks: int = 0
    n_time_masks: int = 0
    seed: int = 0

    def __post_init__(self):
        for field in ("max_freq_mask_width", "max_time_mask_width", "n_freq_masks", "n_time_masks"):
            if getattr(self, field) < 0:
                raise ConfigError(f"{field} must be >= 0")


def spec_augment(s: MelSpectrogram, cfg: SpecAugmentConfig, rng: np.random.Generator | None = None) -> MelSpectrogram:
    """Zero random contiguous bands of mel rows and frame columns.

    Widths are uniform on ``[0, max_width]``.  Pass ``rng`` to draw from a
    running generator (training); otherwise ``cfg.seed`` seeds a fresh one.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    out = s.values.copy()
    n_mels, n_frames = out.shape
    for _ in range(cfg.n_freq_masks):
        width = min(int(rng.integers(0, cfg.max_freq_mask_width + 1)), n_mels)
        start = int(rng.integers(0, n_mels - width + 1))
        out[start : start + width, :] = 0.0
    for _ in range(cfg.n_time_masks):
        width = min(int(rng.integers(0, cfg.max_time_mask_width + 1)), n_frames)
        start = int(rng.integers(0, n_frames - width + 1))
        out[:, start : start + width] = 0.0
    return MelSpectrogram(values=out, frame_rate=s.frame_rate)


# -- resampling and WAV I/O ------------------------------------------------------
def resample(w: Waveform, target_rate: int) -> Waveform:
    """Linear-interpolation resampling; output length round(n * target / source)."""
    if target_rate <= 0:
        raise AudioError(f"target_rate must be positive, got {target_rate}")
    if len(w) == 0:
        raise AudioError("cannot resample an empty waveform")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), target_rate)
    n_out = int(round(len(w) * target_rate / w.sample_rate))
    pos = np.arange(n_out) * (w.sample_rate / target_rate)
    out = np.interp(pos, np.arange(len(w)), w.samples)
    return Waveform(out, target_rate)


def read_wav(path: str | Path) -> Waveform:
    """Read 16-bit PCM WAV; multi-channel input is averaged to mono."""
    try:
        with wave.open(str(path), "rb") as fh:
            n_channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError, struct.error) as exc:
        raise AudioError(f"{path}: not a readable WAV file ({exc})") from exc
    if width != 2:
        raise AudioError(f"{path}: only 16-bit PCM is supported (sample width {width} bytes)")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels > 1:
        data = data[: data.shape[0] - data.shape[0] % n_channels].reshape(-1, n_channels).mean(axis=1)
    return Waveform(data, rate)


def write_wav(path: str | Path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(pcm.tobytes())


# -- feature container -----------------------------------------------------------
FEATURE_MAGIC = b"OKWF"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sHHIf")


def save_features(path: str | Path, s: MelSpectrogram) -> None:
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, s.n_mels, s.n_frames, s.frame_rate)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(s.values, dtype="<f4").tobytes())


def load_features(path: str | Path) -> MelSpectrogram:
    blob = Path(path).read_bytes()
    if len(blob) < _FEATURE_HEADER.size:
        raise ValueError(f"{path}: truncated feature header")
    magic, version, n_mels, n_frames, frame_rate = _FEATURE_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise ValueError(f"{path}: unsupported feature version {version}")
    expected = _FEATURE_HEADER.size + 4 * n_mels * n_frames
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", offset=_FEATURE_HEADER.size).reshape(n_mels, n_frames)
    return MelSpectrogram(values=values.copy(), frame_rate=float(frame_rate))
