"""Causal-LM training: loss, schedule, optimizer, loop, checkpoints.

The optimizer is adaptive-moments with decoupled weight decay (decay is
applied directly to the weights, scaled by the current learning rate, not
mixed into the gradient); the schedule ramps linearly from 0 over the
warmup steps and then decays linearly to 0 at max_steps. Checkpoints are a
manifest.json plus a raw little-endian float32 payload in manifest order,
and round-trip bit-exactly.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .timeline import Timeline, Vocab


class TrainingError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 4.46e-5
    weight_decay: float = 0.14
    batch_size: int = 32
    warmup_steps: int = 15
    max_steps: int | None = None
    max_epochs: int | None = 10
    seed: int = 0
    eval_every: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    precision: str = "float32"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be positive")
        if self.warmup_steps < 0:
            raise TrainingError("warmup_steps must be >= 0")
        if self.max_steps is None and self.max_epochs is None:
            raise TrainingError("set max_steps or max_epochs")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# loss and schedule
# ---------------------------------------------------------------------------

def clm_loss(logits: nm.Tensor, targets: np.ndarray,
             loss_mask: np.ndarray) -> nm.Tensor:
    """Mean negative log-likelihood over unmasked positions.

    `targets` are the inputs shifted left by one; `loss_mask` zeroes PAD
    positions (memory positions never reach here: the model strips them).
    """
    mask = np.asarray(loss_mask, dtype=logits.data.dtype)
    denom = float(mask.sum())
    if denom == 0:
        raise TrainingError("clm_loss: every position is masked")
    logp = nm.log_softmax(logits)
    picked = nm.take_along_last(logp, np.asarray(targets))
    return nm.mul(nm.tsum(nm.mul(picked, mask)), -1.0 / denom)


def lr_at(step: int, config: TrainConfig, max_steps: int | None = None) -> float:
    """Linear ramp 0 -> lr over warmup, then linear decay to 0 at max_steps."""
    total = max_steps if max_steps is not None else config.max_steps
    if total is None:
        raise TrainingError("lr_at needs a resolved max_steps")
    if step >= total:
        return 0.0
    if config.warmup_steps > 0 and step < config.warmup_steps:
        return config.learning_rate * step / config.warmup_steps
    if total == config.warmup_steps:
        return config.learning_rate
    return config.learning_rate * (total - step) / (total - config.warmup_steps)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamW:
    """Adaptive moments with decoupled weight decay and bias correction."""

    def __init__(self, params: dict[str, nm.Tensor], config: TrainConfig):
        self.params = params
        self.config = config
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        cfg = self.config
        self.t += 1
        b1c = 1.0 - cfg.beta1 ** self.t
        b2c = 1.0 - cfg.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for tensor {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            update = (m / b1c) / (np.sqrt(v / b2c) + cfg.eps)
            p.data -= (lr * update).astype(p.data.dtype, copy=False)
            if cfg.weight_decay:
                p.data -= (lr * cfg.weight_decay) * p.data


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def pad_batch(sequences: list[list[int]], pad_id: int
              ) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to the longest sequence in the batch: (ids, real-mask)."""
    width = max(len(s) for s in sequences)
    ids = np.full((len(sequences), width), pad_id, dtype=int)
    mask = np.zeros((len(sequences), width), dtype=bool)
    for i, s in enumerate(sequences):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    return ids, mask


def batch_loss(model, sequences: list[list[int]], pad_id: int,
               train_mode: bool = False,
               rng: np.random.Generator | None = None) -> nm.Tensor:
    ids, mask = pad_batch(sequences, pad_id)
    inputs, in_mask = ids[:, :-1], mask[:, :-1]
    targets, target_mask = ids[:, 1:], mask[:, 1:]
    res = model.forward(inputs, pad_mask=in_mask, train_mode=train_mode, rng=rng)
    return clm_loss(res.logits, targets, target_mask)


def dataset_loss(model, sequences: list[list[int]], pad_id: int,
                 batch_size: int = 64) -> float:
    """Token-weighted mean validation loss over a read-only snapshot."""
    total = 0.0
    weight = 0.0
    with nm.no_grad():
        for i in range(0, len(sequences), batch_size):
            chunk = sequences[i:i + batch_size]
            n_targets = sum(len(s) - 1 for s in chunk)
            loss = batch_loss(model, chunk, pad_id)
            total += loss.item() * n_targets
            weight += n_targets
    return total / weight


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "medseq-checkpoint-v1"
MANIFEST_NAME = "manifest.json"
PAYLOAD_NAME = "params.bin"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    family: str
    model_config: dict
    train_config: dict
    step: int
    val_loss: float | None
    vocab_hash: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def manifest(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "family": self.family,
            "model_config": self.model_config,
            "train_config": self.train_config,
            "step": self.step,
            "val_loss": self.val_loss,
            "vocab_hash": self.vocab_hash,
            "tensors": [{"name": k, "shape": list(v.shape)}
                        for k, v in self.tensors.items()],
        }


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write manifest.json + params.bin (row-major little-endian float32)."""
    path = pathlib.Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(ckpt.manifest(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(path / PAYLOAD_NAME, "wb") as fh:
        for name, arr in ckpt.tensors.items():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, expect_vocab_hash: str | None = None) -> Checkpoint:
    path = pathlib.Path(path)
    try:
        with open(path / MANIFEST_NAME, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"no checkpoint manifest in {path}") from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unrecognised checkpoint format in {path}")
    if expect_vocab_hash is not None and manifest["vocab_hash"] != expect_vocab_hash:
        raise CheckpointError(
            "vocab hash mismatch: checkpoint was built against a different "
            f"vocabulary ({manifest['vocab_hash'][:12]}... != "
            f"{expect_vocab_hash[:12]}...)")
    payload = (path / PAYLOAD_NAME).read_bytes()
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    for spec in manifest["tensors"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) if shape else 1
        chunk = payload[offset:offset + 4 * n]
        if len(chunk) != 4 * n:
            raise CheckpointError(
                f"payload truncated at tensor {spec['name']!r}")
        tensors[spec["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        offset += 4 * n
    if offset != len(payload):
        raise CheckpointError("payload has trailing bytes beyond the manifest")
    return Checkpoint(family=manifest["family"],
                      model_config=manifest["model_config"],
                      train_config=manifest["train_config"],
                      step=manifest["step"], val_loss=manifest["val_loss"],
                      vocab_hash=manifest["vocab_hash"], tensors=tensors)


def check_model_config(ckpt: Checkpoint, expected: dict) -> None:
    """First mismatching field is named in the error."""
    for key in sorted(set(ckpt.model_config) | set(expected)):
        if ckpt.model_config.get(key) != expected.get(key):
            raise CheckpointError(
                f"model config mismatch at field {key!r}: checkpoint has "
                f"{ckpt.model_config.get(key)!r}, expected {expected.get(key)!r}")


def model_from_checkpoint(ckpt: Checkpoint, vocab: Vocab | None = None):
    """Rebuild the right model family with bit-identical parameters."""
    from .baselines import BocConfig, BocLinear, LstmConfig, LstmLM
    from .model import ModelConfig, TransformerLM
    if ckpt.family == "transformer":
        config = ModelConfig.from_json(ckpt.model_config)
        model = TransformerLM(config, params=_as_params(ckpt.tensors))
    elif ckpt.family == "lstm":
        config = LstmConfig.from_json(ckpt.model_config)
        model = LstmLM(config, params=_as_params(ckpt.tensors))
    elif ckpt.family == "boc":
        model = BocLinear(BocConfig.from_json(ckpt.model_config),
                          params=_as_params(ckpt.tensors))
    else:
        raise CheckpointError(f"unknown model family {ckpt.family!r}")
    if vocab is not None and hasattr(model, "attach_vocab"):
        model.attach_vocab(vocab)
    return model


def _as_params(tensors: dict[str, np.ndarray]) -> dict[str, nm.Tensor]:
    return {k: nm.Tensor(v.copy(), requires_grad=True, name=k)
            for k, v in tensors.items()}


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    diverged: bool = False


def train(model, train_timelines: list[Timeline], val_timelines: list[Timeline],
          config: TrainConfig, vocab: Vocab, log_path=None) -> TrainResult:
    """Optimise the CLM objective; return the best-validation checkpoint.

    Deterministic for a fixed seed (single-threaded kernels assumed). On
    divergence the last good (best-validation) checkpoint is returned with
    `diverged` set.
    """
    if not train_timelines:
        raise TrainingError("empty training set")
    train_seqs = [t.token_ids() for t in train_timelines]
    val_seqs = [t.token_ids() for t in val_timelines]
    pad_id = vocab.pad_id

    steps_per_epoch = max(1, (len(train_seqs) + config.batch_size - 1)
                          // config.batch_size)
    max_steps = config.max_steps
    if max_steps is None:
        max_steps = steps_per_epoch * config.max_epochs
    n_epochs = (max_steps + steps_per_epoch - 1) // steps_per_epoch

    optimizer = AdamW(model.parameters(), config)
    history: list[dict] = []
    best = {"val_loss": np.inf, "step": 0,
            "tensors": {k: v.data.copy() for k, v in model.parameters().items()}}
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    diverged = False

    def evaluate(step, lr, train_loss):
        val_loss = (dataset_loss(model, val_seqs, pad_id)
                    if val_seqs else float(train_loss))
        row = {"step": step, "lr": lr, "train_loss": float(train_loss),
               "val_loss": float(val_loss)}
        history.append(row)
        if log_fh:
            log_fh.write(json.dumps(row) + "\n")
            log_fh.flush()
        if val_loss < best["val_loss"]:
            best.update(val_loss=val_loss, step=step,
                        tensors={k: v.data.copy()
                                 for k, v in model.parameters().items()})

    step = 0
    last_loss = float("nan")
    try:
        for epoch in range(n_epochs):
            order = np.random.default_rng((config.seed, epoch)).permutation(
                len(train_seqs))
            for lo in range(0, len(order), config.batch_size):
                if step >= max_steps:
                    break
                idx = order[lo:lo + config.batch_size]
                batch = [train_seqs[i] for i in idx]
                drop_rng = np.random.default_rng((config.seed, epoch, step))
                loss = batch_loss(model, batch, pad_id, train_mode=True,
                                  rng=drop_rng)
                last_loss = loss.item()
                if not np.isfinite(last_loss):
                    raise nm.NonFiniteError("clm_loss")
                grads = nm.grads_of(loss, model.parameters())
                lr = lr_at(step, config, max_steps)
                optimizer.step(grads, lr)
                step += 1
                if step % config.eval_every == 0 or step == max_steps:
                    evaluate(step, lr, last_loss)
            if step >= max_steps:
                break
    except nm.EngineError:
        diverged = True
    finally:
        if log_fh:
            log_fh.close()

    if not history and not diverged:
        evaluate(step, lr_at(step, config, max_steps), last_loss)
    ckpt = Checkpoint(family=model.family,
                      model_config=model.config.to_json(),
                      train_config=config.to_json(),
                      step=best["step"],
                      val_loss=(None if np.isinf(best["val_loss"])
                                else float(best["val_loss"])),
                      vocab_hash=vocab.content_hash(),
                      tensors=best["tensors"])
    return TrainResult(checkpoint=ckpt, history=history, diverged=diverged)
