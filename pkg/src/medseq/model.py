"""Decoder-only causal transformer over timeline tokens.

Pre-norm GPT-style blocks with a set of independently switchable
modifications: trainable memory tokens prepended to the sequence, residual
(score-carrying) attention, ReZero gating (which replaces layer norm),
talking-heads mixing around the softmax, per-query sparse top-k attention,
rotary position encoding (replacing the learned positional table), a GELU-
gated feed-forward (GEGLU), and initialisation of token embeddings from a
precomputed embedding file. The LM head is weight-tied to the token
embeddings.

Memory tokens occupy attention positions 0..m-1 as a fully visible prefix:
they are attended by every sequence position, excluded from the loss, and
produce no output logits (logits align 1:1 with input tokens).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nm
from .timeline import KIND_CONCEPT, Vocab


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    n_layers: int = 6
    n_heads: int = 2
    d_model: int = 300
    d_ff: int | None = None            # defaults to 4 * d_model
    max_seq: int = 50
    positional: str = "learned"        # "learned" | "rotary"
    ffn: str = "gelu"                  # "gelu" | "geglu"
    memory_tokens: int = 0
    rezero: bool = False
    talking_heads: bool = False
    sparse_topk: int = 0               # 0 = dense
    residual_attention: bool = False
    dropout: float = 0.0
    init_std: float = 0.02
    init_embeddings: str | None = None
    tied_head: bool = True             # untied trades parameters for capacity

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        if self.d_model % self.n_heads != 0:
            raise ModelError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.positional not in ("learned", "rotary"):
            raise ModelError(f"unknown positional mode {self.positional!r}")
        if self.positional == "rotary" and (self.d_model // self.n_heads) % 2 != 0:
            raise ModelError("rotary needs an even per-head dimension")
        if self.ffn not in ("gelu", "geglu"):
            raise ModelError(f"unknown ffn mode {self.ffn!r}")
        if self.memory_tokens < 0 or self.sparse_topk < 0:
            raise ModelError("memory_tokens and sparse_topk must be >= 0")
        if not (0.0 <= self.dropout < 1.0):
            raise ModelError("dropout must be in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def init_parameters(config: ModelConfig, rng: np.random.Generator,
                    dtype=np.float32, vocab: "Vocab | None" = None
                    ) -> dict[str, nm.Tensor]:
    """Fresh parameter dict.

    Embedding tables use init_std; projection matrices use fan-in scaling
    (1/sqrt(fan_in)), which at desk-scale widths trains far faster than a
    flat small init. ReZero scalars start at exactly 0, talking-heads
    mixers at identity, every norm at (1, 0), all biases at 0.
    """
    std = config.init_std
    D, F, V = config.d_model, config.d_ff, config.vocab_size
    p: dict[str, nm.Tensor] = {}

    def emb(name, shape):
        p[name] = nm.parameter(rng, shape, std=std, dtype=dtype, name=name)

    def proj(name, shape):
        p[name] = nm.parameter(rng, shape, std=1.0 / np.sqrt(shape[0]),
                               dtype=dtype, name=name)

    def const(name, value):
        p[name] = nm.Tensor(np.asarray(value, dtype=dtype), requires_grad=True,
                            name=name)

    emb("tok_emb", (V, D))
    const("head_bias", np.zeros(V))
    if not config.tied_head:
        proj("head_w", (D, V))
    if config.positional == "learned":
        emb("pos_emb", (config.max_seq, D))
    if config.memory_tokens:
        emb("mem_emb", (config.memory_tokens, D))
    for i in range(config.n_layers):
        pre = f"l{i}."
        for name in ("wq", "wk", "wv", "wo"):
            proj(pre + name, (D, D))
            const(pre + name.replace("w", "b"), np.zeros(D))
        if config.talking_heads:
            const(pre + "mix_pre", np.eye(config.n_heads))
            const(pre + "mix_post", np.eye(config.n_heads))
        if config.ffn == "geglu":
            proj(pre + "ffn.w_val", (D, F))
            const(pre + "ffn.b_val", np.zeros(F))
            proj(pre + "ffn.w_gate", (D, F))
            const(pre + "ffn.b_gate", np.zeros(F))
            proj(pre + "ffn.w_out", (F, D))
            const(pre + "ffn.b_out", np.zeros(D))
        else:
            proj(pre + "ffn.w1", (D, F))
            const(pre + "ffn.b1", np.zeros(F))
            proj(pre + "ffn.w2", (F, D))
            const(pre + "ffn.b2", np.zeros(D))
        if config.rezero:
            const(pre + "alpha_attn", 0.0)
            const(pre + "alpha_ffn", 0.0)
        else:
            const(pre + "ln1.g", np.ones(D))
            const(pre + "ln1.b", np.zeros(D))
            const(pre + "ln2.g", np.ones(D))
            const(pre + "ln2.b", np.zeros(D))
    if not config.rezero:
        const("ln_f.g", np.ones(D))
        const("ln_f.b", np.zeros(D))
    if config.init_embeddings:
        matrix, _ = load_pretrained_embeddings(
            config.init_embeddings, vocab, p["tok_emb"].data)
        p["tok_emb"].data = matrix
    return p


def load_pretrained_embeddings(path, vocab: "Vocab | None",
                               matrix: np.ndarray) -> tuple[np.ndarray, int]:
    """Overwrite rows of `matrix` with vectors from a tab-separated file.

    Each line: concept code, then d_model floats. Rows are matched by
    concept code through `vocab`; with vocab=None the first column is
    taken to be the integer row id directly. Unmatched rows keep their
    existing (random) values. Returns (new matrix, matched row count).
    """
    out = matrix.copy()
    d_model = matrix.shape[1]
    matched = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 2:
                continue
            code, values = parts[0], parts[1:]
            if len(values) != d_model:
                raise ModelError(
                    f"embedding file row {code!r} has {len(values)} dims, "
                    f"model needs {d_model}")
            if vocab is None:
                if not code.lstrip("-").isdigit():
                    raise ModelError(
                        "embedding file is keyed by concept code; pass a vocab")
                row = int(code)
                if not (0 <= row < matrix.shape[0]):
                    continue
            else:
                entry = vocab.get(KIND_CONCEPT, code)
                if entry is None:
                    continue
                row = entry.id
            out[row] = np.asarray([float(v) for v in values], dtype=matrix.dtype)
            matched += 1
    return out, matched


@dataclass
class ForwardResult:
    logits: nm.Tensor          # (batch, seq, vocab) -- memory positions removed
    token_embedding: nm.Tensor  # gather output, pre-positional (batch, seq, d)


class TransformerLM:
    """Causal LM over token ids; parameters live in a flat named dict."""

    family = "transformer"
    _concept_mask: np.ndarray | None = None

    def __init__(self, config: ModelConfig, params: dict[str, nm.Tensor] | None = None,
                 seed: int = 0, dtype=np.float32, vocab: Vocab | None = None):
        self.config = config
        self.dtype = dtype
        if params is None:
            params = init_parameters(config, np.random.default_rng(seed), dtype,
                                     vocab=vocab)
        self.params = params
        if vocab is not None:
            self.attach_vocab(vocab)

    def parameters(self) -> dict[str, nm.Tensor]:
        return self.params

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def forward(self, token_ids: np.ndarray, pad_mask: np.ndarray | None = None,
                train_mode: bool = False, rng: np.random.Generator | None = None
                ) -> ForwardResult:
        cfg = self.config
        p = self.params
        token_ids = np.asarray(token_ids)
        if token_ids.ndim == 1:
            token_ids = token_ids[None, :]
        B, T = token_ids.shape
        if T > cfg.max_seq:
            raise ModelError(f"sequence length {T} exceeds max_seq {cfg.max_seq}")
        if token_ids.min() < 0 or token_ids.max() >= cfg.vocab_size:
            raise ModelError(
                f"token id out of range 0..{cfg.vocab_size - 1}")
        if pad_mask is None:
            pad_mask = np.ones((B, T), dtype=bool)
        m = cfg.memory_tokens
        S = m + T

        drop = cfg.dropout if train_mode else 0.0
        if drop and rng is None:
            raise ModelError("training with dropout needs an rng")

        emb = nm.gather_rows(p["tok_emb"], token_ids)          # (B, T, D)
        x = emb
        if cfg.positional == "learned":
            x = nm.add(x, nm.gather_rows(p["pos_emb"], np.arange(T)))
        if drop:
            x = nm.dropout(x, drop, rng)
        if m:
            mem = nm.broadcast_to(p["mem_emb"], (B, m, cfg.d_model))
            x = nm.concat([mem, x], axis=1)                    # (B, S, D)

        # visibility: causal over the full (memory + tokens) window, with
        # padded key positions removed for every query
        causal = np.tril(np.ones((S, S), dtype=bool))
        key_real = np.concatenate(
            [np.ones((B, m), dtype=bool), pad_mask.astype(bool)], axis=1)
        visible = causal[None, None, :, :] & key_real[:, None, None, :]

        positions = np.arange(S)
        prev_scores: nm.Tensor | None = None
        for i in range(cfg.n_layers):
            x, prev_scores = self._attention_block(
                x, i, prev_scores, visible, positions, drop, rng)
            x = self._ffn_block(x, i, drop, rng)

        if not cfg.rezero:
            x = nm.add(nm.mul(nm.layer_norm(x), p["ln_f.g"]), p["ln_f.b"])
        head = (nm.transpose(p["tok_emb"], (1, 0)) if cfg.tied_head
                else p["head_w"])
        logits = nm.add(nm.matmul(x, head), p["head_bias"])
        if m:
            logits = nm.slice_axis(logits, 1, m, S)
        return ForwardResult(logits=logits, token_embedding=emb)

    def _norm(self, x: nm.Tensor, g_name: str, b_name: str) -> nm.Tensor:
        return nm.add(nm.mul(nm.layer_norm(x), self.params[g_name]),
                      self.params[b_name])

    def _mix_heads(self, scores: nm.Tensor, mixer: nm.Tensor) -> nm.Tensor:
        # (B,H,Q,K) -> (B,Q,K,H) @ (H,H') -> back
        moved = nm.transpose(scores, (0, 2, 3, 1))
        mixed = nm.matmul(moved, mixer)
        return nm.transpose(mixed, (0, 3, 1, 2))

    def _attention_block(self, x, layer, prev_scores, visible, positions,
                         drop, rng):
        cfg = self.config
        p = self.params
        pre = f"l{layer}."
        B, S, D = x.data.shape
        H, dh = cfg.n_heads, cfg.d_head

        if cfg.rezero:
            xn = x
        else:
            xn = self._norm(x, pre + "ln1.g", pre + "ln1.b")

        def heads(name):
            t = nm.add(nm.matmul(xn, p[pre + name]), p[pre + name.replace("w", "b")])
            return nm.transpose(nm.reshape(t, (B, S, H, dh)), (0, 2, 1, 3))

        q, k, v = heads("wq"), heads("wk"), heads("wv")
        if cfg.positional == "rotary":
            q = nm.rotate_pairs(q, positions)
            k = nm.rotate_pairs(k, positions)

        scores = nm.mul(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))),
                        1.0 / math.sqrt(dh))                    # (B,H,S,S)
        if cfg.residual_attention and prev_scores is not None:
            scores = nm.add(scores, prev_scores)
        carried = scores if cfg.residual_attention else None
        if cfg.talking_heads:
            scores = self._mix_heads(scores, p[pre + "mix_pre"])
        weights = nm.masked_softmax(scores, visible, topk=cfg.sparse_topk)
        if cfg.talking_heads:
            weights = self._mix_heads(weights, p[pre + "mix_post"])
        if drop:
            weights = nm.dropout(weights, drop, rng)

        ctx = nm.matmul(weights, v)                             # (B,H,S,dh)
        merged = nm.reshape(nm.transpose(ctx, (0, 2, 1, 3)), (B, S, D))
        out = nm.add(nm.matmul(merged, p[pre + "wo"]), p[pre + "bo"])
        if drop:
            out = nm.dropout(out, drop, rng)
        if cfg.rezero:
            out = nm.mul(out, p[pre + "alpha_attn"])
        return nm.add(x, out), carried

    def _ffn_block(self, x, layer, drop, rng):
        cfg = self.config
        p = self.params
        pre = f"l{layer}."
        xn = x if cfg.rezero else self._norm(x, pre + "ln2.g", pre + "ln2.b")
        if cfg.ffn == "geglu":
            out = glu_ffn(xn, {k[len(pre) + 4:]: v for k, v in p.items()
                               if k.startswith(pre + "ffn.")})
        else:
            h = nm.gelu(nm.add(nm.matmul(xn, p[pre + "ffn.w1"]), p[pre + "ffn.b1"]))
            out = nm.add(nm.matmul(h, p[pre + "ffn.w2"]), p[pre + "ffn.b2"])
        if drop:
            out = nm.dropout(out, drop, rng)
        if cfg.rezero:
            out = nm.mul(out, p[pre + "alpha_ffn"])
        return nm.add(x, out)

    # ------------------------------------------------------------------
    # prediction surfaces
    # ------------------------------------------------------------------

    def next_disorder_distribution(self, token_ids, concept_mask: np.ndarray
                                   ) -> np.ndarray:
        """Softmax over CONCEPT-kind logits at the final context position."""
        token_ids = np.asarray(token_ids)
        if token_ids.size == 0:
            raise ModelError("empty context")
        with nm.no_grad():
            res = self.forward(token_ids.reshape(1, -1))
            final = nm.slice_axis(res.logits, 1, token_ids.size - 1, token_ids.size)
            probs = nm.masked_softmax(final, concept_mask[None, None, :])
        return probs.data[0, 0]

    def disorder_distributions(self, token_ids) -> np.ndarray:
        """Per-position next-disorder distributions for one sequence: (T, V)."""
        [out] = self.disorder_distributions_batch([token_ids])
        return out

    def disorder_distributions_batch(self, sequences, concept_mask=None,
                                     pad_id: int = 0) -> list[np.ndarray]:
        """Batched per-position distributions; one (T_i, V) array per input."""
        if concept_mask is None:
            concept_mask = self._concept_mask
        lengths = [len(s) for s in sequences]
        T = max(lengths)
        ids = np.full((len(sequences), T), pad_id, dtype=int)
        mask = np.zeros((len(sequences), T), dtype=bool)
        for i, s in enumerate(sequences):
            ids[i, :len(s)] = s
            mask[i, :len(s)] = True
        with nm.no_grad():
            res = self.forward(ids, pad_mask=mask)
            probs = nm.masked_softmax(res.logits, concept_mask[None, None, :])
        return [probs.data[i, :lengths[i]] for i in range(len(sequences))]

    def attach_vocab(self, vocab: Vocab) -> "TransformerLM":
        self._concept_mask = vocab.concept_mask()
        return self


# ---------------------------------------------------------------------------
# feed-forward variants
# ---------------------------------------------------------------------------

def glu_ffn(x: nm.Tensor, params: dict[str, nm.Tensor]) -> nm.Tensor:
    """GEGLU: (GELU(x W_gate + b_gate) * (x W_val + b_val)) W_out + b_out."""
    gate = nm.gelu(nm.add(nm.matmul(x, params["w_gate"]), params["b_gate"]))
    val = nm.add(nm.matmul(x, params["w_val"]), params["b_val"])
    return nm.add(nm.matmul(nm.mul(gate, val), params["w_out"]), params["b_out"])


def apply_rotary(x: nm.Tensor, position_indices: np.ndarray) -> nm.Tensor:
    """Rotate coordinate pairs by position * 10000^(-2i/d) (see numerics)."""
    return nm.rotate_pairs(x, position_indices, base=10000.0)


# ---------------------------------------------------------------------------
# ablation variants
# ---------------------------------------------------------------------------

VARIANT_NAMES = ["base", "memory20", "residual-attention", "rezero",
                 "talking-heads", "sparse-top8", "rotary", "glu", "word2vec",
                 "glu+rotary"]


def variant_config(name: str, base: ModelConfig,
                   embeddings_path: str | None = None) -> ModelConfig:
    """One switch flipped per named variant, mirroring the ablation table."""
    table = {
        "base": {},
        "memory20": {"memory_tokens": 20},
        "residual-attention": {"residual_attention": True},
        "rezero": {"rezero": True},
        "talking-heads": {"talking_heads": True},
        "sparse-top8": {"sparse_topk": 8},
        "rotary": {"positional": "rotary"},
        "glu": {"ffn": "geglu"},
        "word2vec": {"init_embeddings": embeddings_path},
        "glu+rotary": {"ffn": "geglu", "positional": "rotary"},
    }
    if name not in table:
        raise ModelError(f"unknown variant {name!r} (choose from {VARIANT_NAMES})")
    if name == "word2vec" and not embeddings_path:
        raise ModelError("variant 'word2vec' needs an embeddings file")
    return replace(base, **table[name])
