"""Comparison models: an LSTM next-token model and a bag-of-concepts
linear classifier, trained through the same gradient engine and evaluated
on the same splits and evaluation points as the transformer.

The bag-of-concepts model deliberately sees order-free features (binary
indicators over previously seen concepts plus the current age scaled to
[0, 1]) so the gap to the sequence models isolates what ordering is worth.
It is a linear one-vs-rest hinge classifier: scores rank candidates for
top-N evaluation directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .timeline import KIND_AGE, KIND_CONCEPT, Vocab


class BaselineError(ValueError):
    pass


# ---------------------------------------------------------------------------
# LSTM language model
# ---------------------------------------------------------------------------

@dataclass
class LstmConfig:
    vocab_size: int
    hidden_size: int = 300
    n_layers: int = 1
    embed_dim: int = 300
    tied_head: bool = True
    init_std: float = 0.02
    max_seq: int = 50
    dropout: float = 0.0

    def __post_init__(self):
        if min(self.vocab_size, self.hidden_size, self.n_layers,
               self.embed_dim) <= 0:
            raise BaselineError("sizes must be positive")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, d: dict) -> "LstmConfig":
        return cls(**d)


def init_lstm_parameters(config: LstmConfig, rng: np.random.Generator,
                         dtype=np.float32) -> dict[str, nm.Tensor]:
    """Embeddings at init_std; weight matrices fan-in scaled (1/sqrt(fan_in),
    the standard recurrent init -- a flat small init leaves the gates blind
    to their inputs and the model stuck at unigram statistics)."""
    H, D, V = config.hidden_size, config.embed_dim, config.vocab_size
    p: dict[str, nm.Tensor] = {}
    p["tok_emb"] = nm.parameter(rng, (V, D), std=config.init_std, dtype=dtype,
                                name="tok_emb")

    def proj(name, shape):
        p[name] = nm.parameter(rng, shape, std=1.0 / np.sqrt(shape[0]),
                               dtype=dtype, name=name)

    for i in range(config.n_layers):
        d_in = D if i == 0 else H
        pre = f"l{i}."
        proj(pre + "w_ih", (d_in, 4 * H))
        proj(pre + "w_hh", (H, 4 * H))
        bias = np.zeros(4 * H, dtype=dtype)
        bias[H:2 * H] = 1.0                       # forget-gate bias at 1
        p[pre + "bias"] = nm.Tensor(bias, requires_grad=True, name=pre + "bias")
    if config.tied_head:
        if H != D:
            proj("head_proj", (H, D))
        p["head_bias"] = nm.Tensor(np.zeros(V, dtype=dtype), requires_grad=True)
    else:
        proj("w_out", (H, V))
        p["head_bias"] = nm.Tensor(np.zeros(V, dtype=dtype), requires_grad=True)
    return p


@dataclass
class LstmForwardResult:
    logits: nm.Tensor
    token_embedding: nm.Tensor


class LstmLM:
    """Left-to-right LSTM: standard input/forget/cell/output gates."""

    family = "lstm"
    _concept_mask: np.ndarray | None = None

    def __init__(self, config: LstmConfig, params: dict[str, nm.Tensor] | None = None,
                 seed: int = 0, dtype=np.float32, vocab: Vocab | None = None):
        self.config = config
        self.dtype = dtype
        if params is None:
            params = init_lstm_parameters(config, np.random.default_rng(seed), dtype)
        self.params = params
        if vocab is not None:
            self.attach_vocab(vocab)

    def parameters(self) -> dict[str, nm.Tensor]:
        return self.params

    def attach_vocab(self, vocab: Vocab) -> "LstmLM":
        self._concept_mask = vocab.concept_mask()
        return self

    def forward(self, token_ids: np.ndarray, pad_mask: np.ndarray | None = None,
                train_mode: bool = False, rng: np.random.Generator | None = None
                ) -> LstmForwardResult:
        cfg = self.config
        p = self.params
        token_ids = np.asarray(token_ids)
        if token_ids.ndim == 1:
            token_ids = token_ids[None, :]
        B, T = token_ids.shape
        if token_ids.min() < 0 or token_ids.max() >= cfg.vocab_size:
            raise BaselineError(f"token id out of range 0..{cfg.vocab_size - 1}")
        H = cfg.hidden_size
        drop = cfg.dropout if train_mode else 0.0

        emb = nm.gather_rows(p["tok_emb"], token_ids)          # (B, T, D)
        layer_in = [nm.slice_axis(emb, 1, t, t + 1) for t in range(T)]
        layer_in = [nm.reshape(x, (B, -1)) for x in layer_in]
        for i in range(cfg.n_layers):
            pre = f"l{i}."
            h = nm.constant(np.zeros((B, H), dtype=emb.data.dtype))
            c = nm.constant(np.zeros((B, H), dtype=emb.data.dtype))
            outs = []
            for x_t in layer_in:
                gates = nm.add(nm.add(nm.matmul(x_t, p[pre + "w_ih"]),
                                      nm.matmul(h, p[pre + "w_hh"])),
                               p[pre + "bias"])
                i_g = nm.sigmoid(nm.slice_axis(gates, 1, 0, H))
                f_g = nm.sigmoid(nm.slice_axis(gates, 1, H, 2 * H))
                g_g = nm.tanh(nm.slice_axis(gates, 1, 2 * H, 3 * H))
                o_g = nm.sigmoid(nm.slice_axis(gates, 1, 3 * H, 4 * H))
                c = nm.add(nm.mul(f_g, c), nm.mul(i_g, g_g))
                h = nm.mul(o_g, nm.tanh(c))
                outs.append(h)
            if drop and rng is not None:
                outs = [nm.dropout(o, drop, rng) for o in outs]
            layer_in = outs
        hidden = nm.concat([nm.reshape(o, (B, 1, H)) for o in layer_in], axis=1)
        if cfg.tied_head:
            if "head_proj" in p:
                hidden = nm.matmul(hidden, p["head_proj"])
            logits = nm.matmul(hidden, nm.transpose(p["tok_emb"], (1, 0)))
        else:
            logits = nm.matmul(hidden, p["w_out"])
        logits = nm.add(logits, p["head_bias"])
        return LstmForwardResult(logits=logits, token_embedding=emb)

    # same prediction surfaces as the transformer
    def next_disorder_distribution(self, token_ids, concept_mask: np.ndarray
                                   ) -> np.ndarray:
        token_ids = np.asarray(token_ids)
        if token_ids.size == 0:
            raise BaselineError("empty context")
        with nm.no_grad():
            res = self.forward(token_ids.reshape(1, -1))
            final = nm.slice_axis(res.logits, 1, token_ids.size - 1, token_ids.size)
            probs = nm.masked_softmax(final, concept_mask[None, None, :])
        return probs.data[0, 0]

    def disorder_distributions(self, token_ids) -> np.ndarray:
        [out] = self.disorder_distributions_batch([token_ids])
        return out

    def disorder_distributions_batch(self, sequences, concept_mask=None,
                                     pad_id: int = 0) -> list[np.ndarray]:
        if concept_mask is None:
            concept_mask = self._concept_mask
        lengths = [len(s) for s in sequences]
        T = max(lengths)
        ids = np.full((len(sequences), T), pad_id, dtype=int)
        for i, s in enumerate(sequences):
            ids[i, :len(s)] = s
        with nm.no_grad():
            res = self.forward(ids)
            probs = nm.masked_softmax(res.logits, concept_mask[None, None, :])
        return [probs.data[i, :lengths[i]] for i in range(len(sequences))]


# ---------------------------------------------------------------------------
# bag-of-concepts linear classifier
# ---------------------------------------------------------------------------

@dataclass
class BocConfig:
    n_features: int
    class_vocab_ids: list[int]     # concept vocab ids, feature/class order

    def to_json(self) -> dict:
        return {"n_features": self.n_features,
                "class_vocab_ids": list(self.class_vocab_ids)}

    @classmethod
    def from_json(cls, d: dict) -> "BocConfig":
        return cls(n_features=d["n_features"],
                   class_vocab_ids=list(d["class_vocab_ids"]))


def boc_featurize(context_token_ids, vocab: Vocab) -> np.ndarray:
    """Binary indicators over the concept vocabulary + current age / 120.

    Built strictly from the context (tokens before the prediction point).
    """
    context_token_ids = list(context_token_ids)
    if not context_token_ids:
        raise BaselineError("empty context")
    concept_ids = [e.id for e in vocab.concept_entries()]
    index = {vid: i for i, vid in enumerate(concept_ids)}
    feat = np.zeros(len(concept_ids) + 1, dtype=np.float32)
    age = 0.0
    for tid in context_token_ids:
        entry = vocab.entry(tid)
        if entry.kind == KIND_CONCEPT:
            feat[index[tid]] = 1.0
        elif entry.kind == KIND_AGE:
            age = float(entry.value)
    feat[-1] = age / 120.0
    return feat


class BocLinear:
    """One-vs-rest linear hinge classifier over bag features."""

    family = "boc"

    def __init__(self, config: BocConfig, params: dict[str, nm.Tensor] | None = None,
                 seed: int = 0):
        self.config = config
        n_classes = len(config.class_vocab_ids)
        if params is None:
            rng = np.random.default_rng(seed)
            params = {
                "w": nm.parameter(rng, (config.n_features, n_classes), std=0.01,
                                  name="w"),
                "b": nm.Tensor(np.zeros(n_classes, dtype=np.float32),
                               requires_grad=True, name="b"),
            }
        self.params = params

    def parameters(self) -> dict[str, nm.Tensor]:
        return self.params

    def scores(self, features: np.ndarray) -> np.ndarray:
        with nm.no_grad():
            out = nm.add(nm.matmul(nm.constant(features.reshape(-1, self.config.n_features)),
                                   self.params["w"]), self.params["b"])
        return out.data

    def vocab_scores(self, features: np.ndarray, vocab_size: int) -> np.ndarray:
        """Class scores scattered onto vocab ids; non-classes sink to -inf."""
        s = self.scores(features)
        out = np.full((s.shape[0], vocab_size), -np.inf)
        out[:, self.config.class_vocab_ids] = s
        return out


def train_boc(features: np.ndarray, labels: np.ndarray, config,
              class_vocab_ids: list[int], seed: int = 0) -> BocLinear:
    """Fit the one-vs-rest hinge classifier with the shared optimizer.

    `labels` are class indices (positions in class_vocab_ids); L2
    regularisation comes from the optimizer's decoupled weight decay.
    """
    from .training import AdamW, lr_at

    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels)
    n_classes = len(class_vocab_ids)
    if len(np.unique(labels)) < 2:
        raise BaselineError("need at least two classes present to train")
    model = BocLinear(BocConfig(features.shape[1], list(class_vocab_ids)),
                      seed=seed)
    opt = AdamW(model.params, config)
    target = -np.ones((len(labels), n_classes), dtype=np.float32)
    target[np.arange(len(labels)), labels] = 1.0

    max_steps = config.max_steps
    if max_steps is None:
        max_steps = config.max_epochs * max(
            1, (len(labels) + config.batch_size - 1) // config.batch_size)
    rng = np.random.default_rng(config.seed)
    step = 0
    while step < max_steps:
        order = rng.permutation(len(labels))
        for lo in range(0, len(order), config.batch_size):
            if step >= max_steps:
                break
            idx = order[lo:lo + config.batch_size]
            x = nm.constant(features[idx])
            t = nm.constant(target[idx])
            s = nm.add(nm.matmul(x, model.params["w"]), model.params["b"])
            hinge = nm.relu(nm.add(nm.neg(nm.mul(s, t)), 1.0))
            loss = nm.tmean(nm.tsum(hinge, axis=1))
            grads = nm.grads_of(loss, model.params)
            opt.step(grads, lr_at(step, config, max_steps))
            step += 1
    return model
