"""Acoustic model: conv stem, residual CNN blocks, BiLSTM encoder, attention BiGRU decoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import BatchNorm2d, BiRNN, Conv2d, LayerNorm, Linear, Module


class InputTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_mels: int
    charset_size: int
    n_rcnn_blocks: int = 5
    n_rnn_blocks: int = 3
    cnn_channels: int = 32
    cnn_kernel: tuple[int, int] = (3, 3)
    stem_stride: int = 2
    rnn_hidden: int = 512
    dropout_p: float = 0.1
    batch_norm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "cnn_kernel", tuple(int(k) for k in self.cnn_kernel))
        if self.n_rcnn_blocks < 1 or self.n_rnn_blocks < 1:
            raise ValueError("need at least one rCNN block and one RNN block")
        if self.rnn_hidden <= 0:
            raise ValueError("rnn_hidden must be positive")
        if self.charset_size < 2:
            raise ValueError("charset must hold the blank and at least one symbol")
        if self.n_mels < 1 or self.stem_stride < 1:
            raise ValueError("n_mels and stem_stride must be positive")
        if any(k % 2 == 0 for k in self.cnn_kernel):
            raise ValueError(f"rCNN kernels must be odd to preserve shape, got {self.cnn_kernel}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")

    @property
    def reduced_mels(self) -> int:
        return math.ceil(self.n_mels / self.stem_stride)

    def output_frames(self, n_frames: int) -> int:
        return math.ceil(n_frames / self.stem_stride)

    @property
    def min_input_frames(self) -> int:
        # attention needs room for the two stacked direction states
        return self.stem_stride + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_kernel"] = list(self.cnn_kernel)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class RCNNBlock(Module):
    """x + f2(f1(x)), each f = Conv(Dropout(GeLU(LayerNorm over mel axis)))."""

    def __init__(self, channels: int, n_feats: int, kernel, dropout_p: float, rng, dtype):
        self.norm1 = LayerNorm(n_feats, axis=2, dtype=dtype)
        self.conv1 = Conv2d(channels, channels, kernel, rng, dtype=dtype)
        self.norm2 = LayerNorm(n_feats, axis=2, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, kernel, rng, dtype=dtype)
        self._p = dropout_p
        self._rng = rng

    def __call__(self, x: Tensor, time_mask: np.ndarray | None = None) -> Tensor:
        h = x
        for norm, conv in ((self.norm1, self.conv1), (self.norm2, self.conv2)):
            h = ag.dropout(ag.gelu(norm(h)), self._p, self.training, self._rng)
            if time_mask is not None:
                h = ag.where_mask(h, time_mask)
            h = conv(h)
        if h.shape != x.shape:
            raise RuntimeError(f"rCNN block changed shape {x.shape} -> {h.shape}")
        return x + h


class EncoderBlock(Module):
    """LayerNorm -> GeLU -> BiLSTM -> Dropout."""

    def __init__(self, d_in: int, hidden: int, dropout_p: float, rng, dtype):
        self.norm = LayerNorm(d_in, dtype=dtype)
        self.rnn = BiRNN("lstm", d_in, hidden, rng, dtype)
        self._p = dropout_p
        self._rng = rng

    def __call__(self, x: Tensor, lengths=None) -> Tensor:
        out, _ = self.rnn(ag.gelu(self.norm(x)), lengths)
        return ag.dropout(out, self._p, self.training, self._rng)


class AttentionHead(Module):
    """Additive scoring: s = v(tanh(w1 x + w2 h)); w1 and w2 carry no bias."""

    def __init__(self, d: int, rng, dtype):
        if d % 2:
            raise ValueError(f"attention feature dim must be even, got {d}")
        self.w1 = Linear(d, d // 2, rng, bias=False, dtype=dtype)
        self.w2 = Linear(d // 2, d // 2, rng, bias=False, dtype=dtype)
        self.v = Linear(d // 2, d, rng, bias=True, dtype=dtype)

    @property
    def dim(self) -> int:
        return self.v.weight.shape[1]


def pad_hidden_state(h: Tensor, target_k: int) -> Tensor:
    """Zero-extend ``h`` (B, k, H) along axis 1 to ``target_k`` rows."""
    k = h.shape[1]
    if target_k < k:
        raise ValueError(f"cannot pad hidden state with {k} rows down to {target_k}")
    if target_k == k:
        return h
    return ag.pad(h, ((0, 0), (0, target_k - k), (0, 0)))


def attention_scores(x: Tensor, h: Tensor, head: AttentionHead) -> Tensor:
    """s = v(tanh(w1(x) + w2(h))); ``h`` must already match ``x`` along axis 1."""
    if h.shape[1] != x.shape[1]:
        raise ValueError(f"hidden state rows {h.shape[1]} do not align with {x.shape[1]} frames")
    return head.v(ag.tanh(head.w1(x) + head.w2(h)))


def attention_apply(x: Tensor, h: Tensor, head: AttentionHead) -> tuple[Tensor, Tensor]:
    """Return ``(concat(c_v, x), weights)`` where ``c_v = softmax(s) * x``.

    ``x`` is (B, T, d); ``h`` is (B, k, d/2) with k <= T and is zero-padded to T.
    The softmax runs over the feature axis.
    """
    if x.shape[-1] != head.dim or h.shape[-1] != head.dim // 2:
        raise ValueError(f"attention dims: x {x.shape}, h {h.shape}, head d={head.dim}")
    h = pad_hidden_state(h, x.shape[1])
    weights = ag.softmax(attention_scores(x, h, head), axis=-1)
    context = weights * x
    return ag.concat([context, x], axis=-1), weights


class DecoderBlock(Module):
    """LayerNorm -> GeLU -> BiGRU -> attention over (output, final hidden) -> Dropout."""

    def __init__(self, d_in: int, hidden: int, dropout_p: float, rng, dtype):
        self.norm = LayerNorm(d_in, dtype=dtype)
        self.rnn = BiRNN("gru", d_in, hidden, rng, dtype)
        self.attention = AttentionHead(2 * hidden, rng, dtype)
        self._p = dropout_p
        self._rng = rng
        self._last_weights: Tensor | None = None

    def __call__(self, x: Tensor, lengths=None) -> Tensor:
        out, ((h_fwd,), (h_bwd,)) = self.rnn(ag.gelu(self.norm(x)), lengths)
        hidden = ag.stack([h_fwd, h_bwd], axis=1)  # (B, 2, H)
        att, self._last_weights = attention_apply(out, hidden, self.attention)
        return ag.dropout(att, self._p, self.training, self._rng)


class AcousticModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float64):
        self.config = cfg
        self._dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self._rng = rng
        C, H = cfg.cnn_channels, cfg.rnn_hidden
        F = cfg.reduced_mels
        self.stem = Conv2d(1, C, (3, 3), rng, stride=cfg.stem_stride, dtype=dtype)
        self.stem_bn = BatchNorm2d(C, dtype=dtype) if cfg.batch_norm else None
        self.rcnn = [RCNNBlock(C, F, cfg.cnn_kernel, cfg.dropout_p, rng, dtype) for _ in range(cfg.n_rcnn_blocks)]
        self.flatten = Linear(C * F, H, rng, dtype=dtype)
        self.encoder = [
            EncoderBlock(H if i == 0 else 2 * H, H, cfg.dropout_p, rng, dtype) for i in range(cfg.n_rnn_blocks)
        ]
        self.decoder = [
            DecoderBlock(2 * H if i == 0 else 4 * H, H, cfg.dropout_p, rng, dtype) for i in range(cfg.n_rnn_blocks)
        ]
        self.classifier = Linear(4 * H, cfg.charset_size, rng, dtype=dtype)

    @property
    def dtype(self):
        return self._dtype

    def reseed(self, seed: int) -> None:
        """Reset the dropout stream (shared by every block)."""
        self._rng.bit_generator.state = np.random.default_rng(seed).bit_generator.state

    # -- stages -------------------------------------------------------------
    def flatten_fc(self, x: Tensor) -> Tensor:
        """(B, C, F, T) -> (B, T, C*F) -> linear to rnn_hidden."""
        B, C, F, T = x.shape
        return self.flatten(x.transpose(0, 3, 1, 2).reshape(B, T, C * F))

    def encoder_forward(self, x: Tensor, lengths=None) -> Tensor:
        for block in self.encoder:
            x = block(x, lengths)
        return x

    def decoder_forward(self, x: Tensor, lengths=None) -> Tensor:
        for block in self.decoder:
            x = block(x, lengths)
        return x

    def attention_weights(self) -> list[Tensor]:
        return [b._last_weights for b in self.decoder]

    def __call__(self, features, lengths=None) -> tuple[Tensor, np.ndarray]:
        """Log-probabilities (B, T', charset_size) and per-utterance output lengths.

        ``features`` is (B, n_mels, T); frames beyond ``lengths[b]`` must be zero.
        """
        x = features if isinstance(features, Tensor) else Tensor(np.asarray(features, dtype=self._dtype))
        if x.ndim != 3 or x.shape[1] != self.config.n_mels:
            raise ValueError(f"expected (B, {self.config.n_mels}, T) features, got {x.shape}")
        B, _, T = x.shape
        lengths = np.full(B, T, dtype=np.int64) if lengths is None else np.asarray(lengths, dtype=np.int64)
        if lengths.min() < self.config.min_input_frames:
            raise InputTooShortError(
                f"utterance of {int(lengths.min())} frames is too short; "
                f"need at least {self.config.min_input_frames} frames for stem stride {self.config.stem_stride}"
            )
        out_lengths = np.array([self.config.output_frames(int(n)) for n in lengths])
        Tout = self.config.output_frames(T)
        mask = None
        if (out_lengths < Tout).any():
            mask = (np.arange(Tout)[None, :] < out_lengths[:, None]).astype(self._dtype)[:, None, None, :]

        h = self.stem(x.reshape(B, 1, self.config.n_mels, T))
        if self.stem_bn is not None:
            h = self.stem_bn(h)
        for block in self.rcnn:
            h = block(h, mask)
        rnn_lengths = None if mask is None else out_lengths
        h = self.flatten_fc(h)
        h = self.encoder_forward(h, rnn_lengths)
        h = self.decoder_forward(h, rnn_lengths)
        return ag.log_softmax(self.classifier(h), axis=-1), out_lengths

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())
