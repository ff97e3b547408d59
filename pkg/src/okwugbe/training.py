"""Optimisers, learning-rate schedule, early stopping, checkpoints and the training loop."""

from __future__ import annotations

import contextlib
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .audio import FrontendConfig, SpecAugmentConfig
from .ctc import ctc_loss_batch, greedy_ids
from .data import Featurizer, ManifestEntry, collate, iterate_batches
from .metrics import corpus_rates
from .model import AcousticModel, ModelConfig
from .serialize import load_params, save_params
from .text import CharSet, decode_text

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_lr: float = 5e-4
    batch_size: int = 20
    epochs: int = 500
    early_stop_patience: int = 100
    optimizer: str = "adamw"
    seed: int = 0
    schedule: str = "one_cycle"
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    grad_clip: float = 5.0
    # stop once validation WER is 0 and mean train loss falls below this
    target_loss: float | None = None

    def __post_init__(self):
        if self.max_lr <= 0:
            raise ValueError("max_lr must be positive")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.optimizer not in ("adamw", "nesterov"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("one_cycle", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


# -- optimisers ----------------------------------------------------------------
def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"parameter {i}: shape {np.shape(p)} != gradient shape {np.shape(g)}")


@dataclass
class AdamWState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    @classmethod
    def zeros_like(cls, params, **hyper) -> "AdamWState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adamw_step(params: list[np.ndarray], grads: Sequence[np.ndarray], state: AdamWState, lr: float) -> None:
    """In place: theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta."""
    _check_shapes(params, grads)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps) + lr * state.weight_decay * p
        p -= update.astype(p.dtype, copy=False)


@dataclass
class NesterovState:
    velocity: list[np.ndarray]
    momentum: float = 0.9
    step: int = 0

    @classmethod
    def zeros_like(cls, params, momentum: float = 0.9) -> "NesterovState":
        return cls([np.zeros_like(p) for p in params], momentum)


def nesterov_step(params: list[np.ndarray], grads: Sequence[np.ndarray], state: NesterovState, lr: float) -> None:
    """In place: v = mu v - lr g; theta += v.

    ``grads`` must be evaluated at the look-ahead point ``theta + mu v``
    (see :func:`nesterov_lookahead`).
    """
    _check_shapes(params, grads)
    state.step += 1
    for p, g, v in zip(params, grads, state.velocity):
        v *= state.momentum
        v -= lr * g
        p += v


@contextlib.contextmanager
def nesterov_lookahead(params: list[np.ndarray], state: NesterovState):
    """Temporarily move parameters to ``theta + mu v`` while gradients are computed."""
    for p, v in zip(params, state.velocity):
        p += state.momentum * v
    try:
        yield
    finally:
        for p, v in zip(params, state.velocity):
            p -= state.momentum * v


class Optimizer:
    """Binds a parameter list to AdamW or Nesterov state."""

    def __init__(self, params: list[ag.Tensor], cfg: TrainConfig):
        self.params = params
        self.kind = cfg.optimizer
        arrays = [p.data for p in params]
        if self.kind == "adamw":
            self.state = AdamWState.zeros_like(
                arrays, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, weight_decay=cfg.weight_decay
            )
        else:
            self.state = NesterovState.zeros_like(arrays, cfg.momentum)

    def lookahead(self):
        if self.kind == "nesterov":
            return nesterov_lookahead([p.data for p in self.params], self.state)
        return contextlib.nullcontext()

    def step(self, lr: float) -> None:
        arrays = [p.data for p in self.params]
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if self.kind == "adamw":
            adamw_step(arrays, grads, self.state, lr)
        else:
            nesterov_step(arrays, grads, self.state, lr)

    @property
    def step_count(self) -> int:
        return self.state.step

    def state_arrays(self, names: Sequence[str]) -> dict[str, np.ndarray]:
        if self.kind == "adamw":
            out = {f"m/{n}": m for n, m in zip(names, self.state.m)}
            out.update({f"v/{n}": v for n, v in zip(names, self.state.v)})
            return out
        return {f"velocity/{n}": v for n, v in zip(names, self.state.velocity)}

    def load_state_arrays(self, names: Sequence[str], arrays: dict[str, np.ndarray], step: int) -> None:
        dt = self.params[0].dtype
        if self.kind == "adamw":
            self.state.m = [arrays[f"m/{n}"].astype(dt) for n in names]
            self.state.v = [arrays[f"v/{n}"].astype(dt) for n in names]
        else:
            self.state.velocity = [arrays[f"velocity/{n}"].astype(dt) for n in names]
        self.state.step = step


def clip_grad_norm(params: Sequence[ag.Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    sq = sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in params if p.grad is not None)
    norm = math.sqrt(sq)
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


# -- schedule -----------------------------------------------------------------
WARMUP_FRACTION = 0.3
START_DIV = 25.0
FINAL_DIV = 1e4


def one_cycle(t: float, total_steps: int, max_lr: float) -> float:
    """Continuous one-cycle curve: linear warm-up to 30%, cosine decay to the last step."""
    warm = WARMUP_FRACTION * total_steps
    start, final = max_lr / START_DIV, max_lr / FINAL_DIV
    if t <= warm:
        return start + (max_lr - start) * (t / warm if warm > 0 else 1.0)
    span = (total_steps - 1) - warm
    progress = min((t - warm) / span, 1.0) if span > 0 else 1.0
    return final + (max_lr - final) * 0.5 * (1.0 + math.cos(math.pi * progress))


def lr_at(schedule: str, step: int, total_steps: int, max_lr: float) -> float:
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if schedule == "constant":
        return max_lr
    if schedule == "one_cycle":
        return one_cycle(float(step), total_steps, max_lr)
    raise ValueError(f"unknown schedule {schedule!r}")


class EarlyStopping:
    """Signal a stop after ``patience`` consecutive epochs without a strictly lower metric."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.stale = 0

    def update(self, metric: float) -> bool:
        """Record one epoch; return True when training should stop."""
        if metric < self.best:
            self.best = metric
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


# -- checkpoints -----------------------------------------------------------------
def config_hash(*parts: dict) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def save_model(directory: str | Path, model: AcousticModel, cs: CharSet, frontend: FrontendConfig) -> None:
    """``model.okwp`` (parameters and running statistics) plus ``model.json`` (configs, charset)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_params(directory / "model.okwp", model.state_dict())
    _write_json(
        directory / "model.json",
        {
            "format": "okwugbe-model",
            "version": 1,
            "model_config": model.config.to_dict(),
            "frontend": asdict(frontend),
            "charset_digest": cs.digest,
            "charset": list(cs.symbols),
        },
    )


def load_model(directory: str | Path, cs: CharSet | None = None) -> tuple[AcousticModel, CharSet, FrontendConfig]:
    """Load a saved model; with ``cs`` given, refuse a checkpoint trained on a different charset."""
    directory = resolve_checkpoint(directory)
    meta_path = directory / "model.json"
    if not meta_path.exists():
        raise CheckpointError(f"{directory}: no model.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    saved_cs = CharSet(symbols=tuple(meta["charset"]))
    if saved_cs.digest != meta["charset_digest"]:
        raise CheckpointError(f"{directory}: charset digest does not match stored symbols")
    if cs is not None and cs.digest != saved_cs.digest:
        raise CheckpointError(
            f"charset mismatch: checkpoint {saved_cs.digest} vs supplied {cs.digest}; refusing to load"
        )
    cfg = ModelConfig.from_dict(meta["model_config"])
    if cfg.charset_size != len(saved_cs):
        raise CheckpointError(f"{directory}: model output size {cfg.charset_size} != charset size {len(saved_cs)}")
    model = AcousticModel(cfg, dtype=np.float32)
    model.load_state_dict(load_params(directory / "model.okwp"))
    model.eval()
    return model, saved_cs, FrontendConfig(**meta["frontend"])


def resolve_checkpoint(path: str | Path) -> Path:
    """A run directory resolves through its ``best`` marker; a checkpoint directory is returned as is."""
    path = Path(path)
    marker = path / "best"
    if marker.is_file():
        return path / marker.read_text(encoding="utf-8").strip()
    return path


@dataclass
class Checkpoint:
    parameters: dict[str, np.ndarray]
    optimizer_state: dict[str, np.ndarray]
    epoch: int
    val_wer: float
    val_cer: float
    config_hash: str
    optimizer_step: int = 0


def save_checkpoint(directory: Path, ckpt: Checkpoint, model: AcousticModel, cs: CharSet,
                    frontend: FrontendConfig, optimizer_kind: str) -> None:
    save_model(directory, model, cs, frontend)
    save_params(directory / "optimizer.okwp", ckpt.optimizer_state)
    _write_json(
        directory / "checkpoint.json",
        {
            "epoch": ckpt.epoch,
            "val_wer": ckpt.val_wer,
            "val_cer": ckpt.val_cer,
            "config_hash": ckpt.config_hash,
            "optimizer": optimizer_kind,
            "optimizer_step": ckpt.optimizer_step,
        },
    )


# -- loop -------------------------------------------------------------------------
@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_wer: float
    val_cer: float
    lr: float
    steps: int
    skipped: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    best: Checkpoint
    history: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False
    steps: int = 0


def decode_entries(
    model: AcousticModel,
    entries: Sequence[ManifestEntry],
    cs: CharSet,
    featurizer: Featurizer,
    batch_size: int = 16,
) -> list[str]:
    """Greedy transcripts for ``entries`` in eval mode (training mode is restored)."""
    was_training = model.training
    model.eval()
    out: list[str] = []
    try:
        with ag.no_grad():
            for chunk in iterate_batches(entries, batch_size):
                batch = collate(chunk, cs, featurizer, model.config.stem_stride, dtype=model.dtype)
                log_probs, lengths = model(batch.features, batch.feature_lengths)
                for b in range(len(batch)):
                    out.append(decode_text(greedy_ids(log_probs.data[b, : lengths[b]], cs.blank_index), cs))
    finally:
        model.train(was_training)
    return out


def train(
    model: AcousticModel,
    train_set: Sequence[ManifestEntry],
    val_set: Sequence[ManifestEntry],
    cs: CharSet,
    featurizer: Featurizer,
    cfg: TrainConfig,
    run_dir: str | Path | None = None,
    augment: SpecAugmentConfig | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Optimise ``model`` with CTC and keep the parameters with the lowest validation WER."""
    if model.config.charset_size != len(cs):
        raise TrainingError(f"model outputs {model.config.charset_size} classes but charset has {len(cs)}")
    if not train_set:
        raise TrainingError("empty training set")
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        history_path = run_dir / "history.jsonl"
        history_path.write_text("", encoding="utf-8")

    names = [n for n, _ in model.named_parameters()]
    params = model.parameters()
    opt = Optimizer(params, cfg)
    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    chash = config_hash(model.config.to_dict(), asdict(cfg), asdict(featurizer.cfg), {"charset": cs.digest})
    stopper = EarlyStopping(cfg.early_stop_patience)
    result: TrainResult | None = None
    history: list[EpochRecord] = []
    step = 0
    model.train()

    for epoch in range(1, cfg.epochs + 1):
        shuffle_rng = np.random.default_rng([cfg.seed, epoch])
        aug_rng = np.random.default_rng([cfg.seed, epoch, 1])
        model.reseed(hash((cfg.seed, epoch)) & 0xFFFFFFFF)
        losses: list[float] = []
        skipped = 0
        lr = lr_at(cfg.schedule, min(step, total_steps - 1), total_steps, cfg.max_lr)
        for chunk in iterate_batches(train_set, cfg.batch_size, shuffle_rng):
            batch = collate(chunk, cs, featurizer, model.config.stem_stride, augment, aug_rng, dtype=model.dtype)
            if batch.infeasible:
                log.warning("epoch %d: skipping infeasible utterances %s",
                            epoch, [batch.ids[i] for i in batch.infeasible])
                skipped += len(batch.infeasible)
                keep = [i for i in range(len(batch)) if i not in set(batch.infeasible)]
                if not keep:
                    step += 1
                    continue
                batch.features = batch.features[keep]
                batch.feature_lengths = batch.feature_lengths[keep]
                batch.labels = [batch.labels[i] for i in keep]
                batch.ids = [batch.ids[i] for i in keep]
            lr = lr_at(cfg.schedule, min(step, total_steps - 1), total_steps, cfg.max_lr)
            model.zero_grad()
            with opt.lookahead():
                log_probs, out_lengths = model(batch.features, batch.feature_lengths)
                loss, _ = ctc_loss_batch(log_probs, batch.labels, out_lengths, cs.blank_index)
                if loss is None:
                    step += 1
                    continue
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"epoch {epoch}: non-finite loss {value} on batch {batch.ids}")
                loss.backward()
            clip_grad_norm(params, cfg.grad_clip)
            opt.step(lr)
            losses.append(value)
            step += 1
        if not losses:
            raise TrainingError(f"epoch {epoch}: every utterance was infeasible for CTC")

        hyps = decode_entries(model, val_set, cs, featurizer, cfg.batch_size) if val_set else []
        w, c = corpus_rates(zip((e.transcript for e in val_set), hyps))
        val_wer = w.rate if w.reference_length else math.inf
        val_cer = c.rate if c.reference_length else math.inf
        rec = EpochRecord(epoch, float(np.mean(losses)), val_wer, val_cer, lr, step, skipped)
        history.append(rec)
        if run_dir is not None:
            with open(history_path, "a", encoding="utf-8") as fh:
                fh.write(rec.to_json() + "\n")
        if on_epoch is not None:
            on_epoch(rec)
        log.info("epoch %d loss %.4f val WER %.2f CER %.2f lr %.2e", epoch, rec.train_loss, val_wer, val_cer, lr)

        if result is None or val_wer < result.best.val_wer:
            ckpt = Checkpoint(
                parameters={k: v.copy() for k, v in model.state_dict().items()},
                optimizer_state={k: v.copy() for k, v in opt.state_arrays(names).items()},
                epoch=epoch,
                val_wer=val_wer,
                val_cer=val_cer,
                config_hash=chash,
                optimizer_step=opt.step_count,
            )
            result = TrainResult(best=ckpt)
            if run_dir is not None:
                name = f"epoch_{epoch:05d}"
                save_checkpoint(run_dir / name, ckpt, model, cs, featurizer.cfg, cfg.optimizer)
                (run_dir / "best").write_text(name + "\n", encoding="utf-8")

        stop = stopper.update(val_wer)
        if cfg.target_loss is not None and val_wer == 0.0 and rec.train_loss < cfg.target_loss:
            result.stopped_early = True
            break
        if stop:
            log.info("early stopping after %d epochs without validation WER improvement", stopper.stale)
            result.stopped_early = True
            break

    assert result is not None
    result.history = history
    result.steps = step
    return result
