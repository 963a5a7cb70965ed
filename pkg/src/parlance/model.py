"""Shared-parameter transformer with hybrid attention masking and task heads.

One block stack serves every task: generation reads it with a
bidirectional-prefix/causal-suffix mask, while recognition, coherence and
masked-token passes read the very same arrays with a fully bidirectional
mask. Blocks use pre-normalization (layer norm ahead of each sublayer and a
final norm before any head).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_MASK, Tensor
from .data import SPECIALS


@dataclass
class ModelConfig:
    vocab_size: int
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    max_positions: int = 128
    n_segments: int = 5
    latent_k: int = 8
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.latent_k < 1:
            raise ValueError("latent_k must be >= 1")
        if self.vocab_size < len(SPECIALS):
            raise ValueError("vocab_size smaller than the reserved special set")

    @property
    def head_dim(self):
        return self.d_model // self.n_heads


# Published full-scale configuration, recorded for reference only; this
# repository never instantiates it.
FULL_SCALE_REFERENCE = {
    "n_layers": 32,
    "n_heads": 32,
    "d_model": 2048,
    "vocab_size": 8000,
    "pretraining_samples": 684_000_000,
}

GENERATION_HEAD_NAMES = ("latent_emb", "post_head_w", "bow_head_w")
EVALUATION_HEAD_NAMES = ("coh_head_w", "coh_head_b")


class Parameters:
    """Named tensor store for one model role (stage1 | generation | evaluation)."""

    def __init__(self, config, role, tensors):
        if role not in ("stage1", "generation", "evaluation"):
            raise ValueError(f"unknown parameter role {role!r}")
        self.config = config
        self.role = role
        self.tensors = tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def names(self):
        return list(self.tensors)

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy_from(self, other):
        """Copy values for every shared name; report (copied, fresh) names."""
        copied, fresh = [], []
        for name, t in self.tensors.items():
            if name in other.tensors and other.tensors[name].data.shape == t.data.shape:
                t.data = other.tensors[name].data.copy()
                copied.append(name)
            else:
                fresh.append(name)
        return copied, fresh

    def clone(self):
        tensors = {}
        for name, t in self.tensors.items():
            c = Tensor(t.data.copy(), requires_grad=t.requires_grad, name=name)
            tensors[name] = c
        return Parameters(self.config, self.role, tensors)


def init_parameters(config, rng, role="stage1", init_scale=0.02):
    """Fresh parameter set: normal(0, 0.02) weights, standard norm affines."""

    tensors = {}

    def param(name, shape, kind="normal"):
        if kind == "normal":
            data = rng.normal(0.0, init_scale, size=shape)
        elif kind == "zeros":
            data = np.zeros(shape)
        elif kind == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(kind)
        tensors[name] = Tensor(data, requires_grad=True, name=name)

    param("tok_emb", (config.vocab_size, config.d_model))
    param("seg_emb", (config.n_segments, config.d_model))
    param("pos_emb", (config.max_positions, config.d_model))
    for i in range(config.n_layers):
        param(f"ln1_g_{i}", (config.d_model,), "ones")
        param(f"ln1_b_{i}", (config.d_model,), "zeros")
        param(f"attn_qkv_w_{i}", (config.d_model, 3 * config.d_model))
        param(f"attn_qkv_b_{i}", (3 * config.d_model,), "zeros")
        param(f"attn_out_w_{i}", (config.d_model, config.d_model))
        param(f"attn_out_b_{i}", (config.d_model,), "zeros")
        param(f"ln2_g_{i}", (config.d_model,), "ones")
        param(f"ln2_b_{i}", (config.d_model,), "zeros")
        param(f"ff_w1_{i}", (config.d_model, config.d_ff))
        param(f"ff_b1_{i}", (config.d_ff,), "zeros")
        param(f"ff_w2_{i}", (config.d_ff, config.d_model))
        param(f"ff_b2_{i}", (config.d_model,), "zeros")
    param("ln_f_g", (config.d_model,), "ones")
    param("ln_f_b", (config.d_model,), "zeros")
    param("lm_head_w", (config.d_model, config.vocab_size))

    if role == "generation":
        param("latent_emb", (config.latent_k, config.d_model))
        param("post_head_w", (config.d_model, config.latent_k))
        param("bow_head_w", (config.d_model, config.vocab_size))
    elif role == "evaluation":
        param("coh_head_w", (config.d_model, 1))
        param("coh_head_b", (1,), "zeros")

    return Parameters(config, role, tensors)


# ---------------------------------------------------------------------------
# Attention masks


def build_mask(prefix_len, response_len):
    """Boolean (L, L) mask: bidirectional prefix, causal response suffix."""
    if prefix_len < 0 or response_len < 0:
        raise ValueError("lengths must be non-negative")
    n = prefix_len + response_len
    allowed = np.zeros((n, n), dtype=bool)
    allowed[:prefix_len, :prefix_len] = True
    if response_len:
        allowed[prefix_len:, :prefix_len] = True
        allowed[prefix_len:, prefix_len:] = np.tril(np.ones((response_len, response_len), dtype=bool))
    return allowed


def full_mask(length):
    return np.ones((length, length), dtype=bool)


@dataclass
class Batch:
    """Padded id arrays plus the additive attention bias and loss indices."""

    token_ids: np.ndarray      # (B, L) int64
    segment_ids: np.ndarray    # (B, L)
    position_ids: np.ndarray   # (B, L)
    attn_bias: np.ndarray      # (B, 1, L, L) float64, 0 where allowed
    lengths: np.ndarray        # (B,)
    prefix_lens: np.ndarray    # (B,)
    slot_len: int
    latent_ids: np.ndarray | None = None
    resp_rows: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    resp_cols: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    resp_targets: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    @property
    def size(self):
        return self.token_ids.shape[0]


def collate(encodeds, pad_id, bidirectional=False):
    """Pad a list of EncodedInput into one Batch with per-sample masks."""
    if not encodeds:
        raise ValueError("empty batch")
    slot_lens = {e.slot_len for e in encodeds}
    if len(slot_lens) != 1:
        raise ValueError("cannot mix slotted and slotless encodings in one batch")
    max_len = max(e.length for e in encodeds)
    n = len(encodeds)
    token_ids = np.full((n, max_len), pad_id, dtype=np.int64)
    segment_ids = np.zeros((n, max_len), dtype=np.int64)
    position_ids = np.zeros((n, max_len), dtype=np.int64)
    allowed = np.zeros((n, max_len, max_len), dtype=np.float64)
    lengths = np.zeros(n, dtype=np.int64)
    prefix_lens = np.zeros(n, dtype=np.int64)
    latent_ids = np.zeros(n, dtype=np.int64)
    has_latent = False
    resp_rows, resp_cols, resp_targets = [], [], []

    for b, e in enumerate(encodeds):
        ln = e.length
        token_ids[b, :ln] = e.token_ids
        segment_ids[b, :ln] = e.segment_ids
        position_ids[b, :ln] = e.position_ids
        lengths[b] = ln
        prefix_lens[b] = e.prefix_len
        if bidirectional:
            allowed[b, :ln, :ln] = 1.0
        else:
            allowed[b, :ln, :ln] = build_mask(e.prefix_len, e.response_len)
        if e.latent_id is not None:
            has_latent = True
            latent_ids[b] = e.latent_id
        if e.response_targets is not None:
            for j in range(e.response_len):
                resp_rows.append(b)
                resp_cols.append(e.prefix_len + j)
                resp_targets.append(e.response_targets[j])

    bias = (1.0 - allowed)[:, None, :, :] * NEG_MASK
    return Batch(
        token_ids=token_ids,
        segment_ids=segment_ids,
        position_ids=position_ids,
        attn_bias=bias,
        lengths=lengths,
        prefix_lens=prefix_lens,
        slot_len=next(iter(slot_lens)),
        latent_ids=latent_ids if has_latent else None,
        resp_rows=np.asarray(resp_rows, dtype=np.int64),
        resp_cols=np.asarray(resp_cols, dtype=np.int64),
        resp_targets=np.asarray(resp_targets, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# Transformer forward


def _embed(params, batch, slot_override=None):
    tok = params["tok_emb"]
    seg = params["seg_emb"]
    pos = params["pos_emb"]
    if slot_override is None:
        return (
            ad.embedding(tok, batch.token_ids)
            + ad.embedding(seg, batch.segment_ids)
            + ad.embedding(pos, batch.position_ids)
        )
    if batch.slot_len != 1:
        raise ValueError("slot override requires a slotted batch")
    rest = (
        ad.embedding(tok, batch.token_ids[:, 1:])
        + ad.embedding(seg, batch.segment_ids[:, 1:])
        + ad.embedding(pos, batch.position_ids[:, 1:])
    )
    slot = (
        ad.reshape(slot_override, (batch.size, 1, slot_override.shape[-1]))
        + ad.embedding(seg, batch.segment_ids[:, :1])
        + ad.embedding(pos, batch.position_ids[:, :1])
    )
    return ad.concat([slot, rest], axis=1)


def transformer_hidden(config, params, batch, slot_override=None, rng=None, training=False):
    """Run the block stack; returns final-normalized hidden states (B, L, D).

    The residual stream is kept flat (B*L, D) so every projection is one
    large 2-D BLAS call; only attention internals reshape to (B, H, L, dh).
    """
    b, length = batch.token_ids.shape
    d = config.d_model
    h = ad.reshape(_embed(params, batch, slot_override), (b * length, d))
    bias = Tensor(batch.attn_bias)
    scale = 1.0 / math.sqrt(config.head_dim)
    drop = config.dropout if training else 0.0

    for i in range(config.n_layers):
        hn = ad.layer_norm(h, params[f"ln1_g_{i}"], params[f"ln1_b_{i}"])
        qkv = ad.add(ad.matmul(hn, params[f"attn_qkv_w_{i}"]), params[f"attn_qkv_b_{i}"])
        qkv = ad.reshape(qkv, (b, length, 3, config.n_heads, config.head_dim))
        qkv = ad.transpose(qkv, (2, 0, 3, 1, 4))  # (3, B, H, L, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ad.add(ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), Tensor(scale)), bias)
        attn = ad.softmax(scores, axis=-1)
        if drop:
            attn = ad.dropout(attn, drop, rng)
        ctx = ad.matmul(attn, v)  # (B, H, L, dh)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b * length, d))
        out = ad.add(ad.matmul(ctx, params[f"attn_out_w_{i}"]), params[f"attn_out_b_{i}"])
        if drop:
            out = ad.dropout(out, drop, rng)
        h = ad.add(h, out)

        hn = ad.layer_norm(h, params[f"ln2_g_{i}"], params[f"ln2_b_{i}"])
        ff = ad.gelu(ad.add(ad.matmul(hn, params[f"ff_w1_{i}"]), params[f"ff_b1_{i}"]))
        ff = ad.add(ad.matmul(ff, params[f"ff_w2_{i}"]), params[f"ff_b2_{i}"])
        if drop:
            ff = ad.dropout(ff, drop, rng)
        h = ad.add(h, ff)

    final = ad.layer_norm(h, params["ln_f_g"], params["ln_f_b"])
    return ad.reshape(final, (b, length, d))


def latent_override_from_ids(params, latent_ids):
    """Latent-table rows for fixed z ids (decode-time injection)."""
    return ad.embedding(params["latent_emb"], np.asarray(latent_ids, dtype=np.int64))


def latent_override_from_onehot(params, onehot):
    """Latent vectors from (B, K) one-hot/soft weights (training-time)."""
    return ad.matmul(onehot, params["latent_emb"])


def lm_logits(config, params, batch, slot_override=None, rng=None, training=False):
    """Next-token logits gathered at every real response position.

    Returns (logits (N, V), targets (N,), hidden (B, L, D)). Position j of a
    sample's response slice predicts response_targets[j].
    """
    if batch.latent_ids is not None and slot_override is None:
        slot_override = latent_override_from_ids(params, batch.latent_ids)
    hidden = transformer_hidden(config, params, batch, slot_override, rng, training)
    rows = hidden[(batch.resp_rows, batch.resp_cols)]
    return ad.matmul(rows, params["lm_head_w"]), batch.resp_targets, hidden


def forward_lm(config, params, encoded, pad_id=0):
    """Single-sample convenience: (response_len, V) next-token logits."""
    batch = collate([encoded], pad_id)
    logits, _, _ = lm_logits(config, params, batch)
    return logits


def posterior_logits(config, params, batch, rng=None, training=False):
    """(B, K) recognition logits from the CLS slot of a joint encoding."""
    hidden = transformer_hidden(config, params, batch, rng=rng, training=training)
    return ad.matmul(hidden[:, 0], params["post_head_w"])


def forward_posterior(config, params, encoded_joint, pad_id=0):
    """K-simplex posterior over latent values for one (c, r) pair."""
    batch = collate([encoded_joint], pad_id, bidirectional=True)
    return ad.softmax(posterior_logits(config, params, batch), axis=-1)[0]


def forward_bow(params, h_z):
    """Position-independent vocabulary logits from the latent slot state."""
    two_d = h_z if h_z.ndim == 2 else ad.reshape(h_z, (1, h_z.shape[-1]))
    return ad.matmul(two_d, params["bow_head_w"])


def coherence_logits(config, params, batch, rng=None, training=False):
    """(B,) pre-sigmoid coherence scores from the CLS slot."""
    hidden = transformer_hidden(config, params, batch, rng=rng, training=training)
    logits = ad.add(ad.matmul(hidden[:, 0], params["coh_head_w"]), params["coh_head_b"])
    return logits[:, 0]


def coherence_probs(config, params, batch, rng=None, training=False):
    """(B,) coherence probabilities from the CLS slot."""
    return ad.sigmoid(coherence_logits(config, params, batch, rng=rng, training=training))


def forward_coherence(config, params, encoded_joint, pad_id=0):
    """Scalar coherence probability in (0, 1) for one (c, r [, k]) encoding."""
    batch = collate([encoded_joint], pad_id, bidirectional=True)
    return coherence_probs(config, params, batch)[0]


def mlm_logits(config, params, batch, positions_rows, positions_cols, rng=None, training=False):
    """Vocabulary logits at masked positions of a bidirectional batch."""
    if positions_rows.size == 0:
        raise ValueError("mlm requires at least one masked position")
    hidden = transformer_hidden(config, params, batch, rng=rng, training=training)
    rows = hidden[(positions_rows, positions_cols)]
    return ad.matmul(rows, params["lm_head_w"])
