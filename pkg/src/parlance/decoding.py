"""Decoding strategies, per-latent candidate generation, and response selection.

Inference defaults follow the reference settings: top-k sampling with k=20
for open-domain and knowledge modes, beam search with beam size 5 for the
task-oriented mode. Selection picks the candidate with the highest coherence
score; length-averaged forward likelihood and backward likelihood are kept
as comparison scorers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .data import DialogueSample, EncodedInput, encode_context, encode_joint, encode_sample
from .model import build_mask, collate, lm_logits, transformer_hidden


@dataclass
class DecodeConfig:
    strategy: str = "top_k"  # "top_k" | "beam"
    top_k: int = 20
    beam_size: int = 5
    max_new_tokens: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("top_k", "beam"):
            raise ValueError(f"unknown decode strategy {self.strategy!r}")
        if self.top_k < 1 or self.beam_size < 1:
            raise ValueError("top_k and beam_size must be >= 1")


@dataclass
class Candidate:
    latent_id: int
    token_ids: list[int]
    text: str
    avg_logprob: float
    coherence: float | None = None
    forward_score: float | None = None
    backward_score: float | None = None


def top_k_sample(logits, k, rng):
    """Sample a token id from the renormalized top-k mass.

    Ties at the k-th logit break toward the lower token id, so the chosen
    set is deterministic.
    """
    logits = np.asarray(logits, dtype=np.float64)
    v = logits.shape[-1]
    if k > v:
        raise ValueError(f"k={k} exceeds vocabulary size {v}")
    order = np.lexsort((np.arange(v), -logits))  # desc logit, asc id on ties
    top = order[:k]
    shifted = logits[top] - logits[top].max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    return int(top[min(idx, k - 1)])


def _log_softmax(rows):
    shifted = rows - rows.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _extend_encoding(prefix, tokens, scheme_response_seg=1):
    """Prefix encoding plus the generated response-so-far as the causal suffix."""
    n = len(tokens)
    total = prefix.length + n
    return EncodedInput(
        token_ids=np.concatenate([prefix.token_ids, np.asarray(tokens, dtype=np.int64)]),
        segment_ids=np.concatenate(
            [prefix.segment_ids, np.full(n, scheme_response_seg, dtype=np.int64)]
        ),
        position_ids=np.arange(total, dtype=np.int64),
        slot_len=prefix.slot_len,
        knowledge_len=prefix.knowledge_len,
        context_len=prefix.context_len,
        response_len=n,
        latent_id=prefix.latent_id,
    )


def _last_position_logits(config, params, prefixes, rows, vocab):
    """(n, V) next-token logits for each prefix extended with its row."""
    encs = [_extend_encoding(p, r) for p, r in zip(prefixes, rows)]
    batch = collate(encs, vocab.pad_id)
    hidden = transformer_hidden(
        config,
        params,
        batch,
        slot_override=None
        if batch.latent_ids is None
        else ad.embedding(params["latent_emb"], batch.latent_ids),
    )
    last_cols = batch.lengths - 1
    rows_idx = np.arange(batch.size)
    out = ad.matmul(hidden[(rows_idx, last_cols)], params["lm_head_w"])
    return out.data


def sample_decode(config, params, vocab, prefixes, decode_config, rngs):
    """Top-k sampling decode for a batch of prefixes, one RNG per row.

    Returns (token lists without BOS/EOS, mean log-prob per generated token
    under the full distribution).
    """
    n = len(prefixes)
    rows = [[vocab.bos_id] for _ in range(n)]
    done = [False] * n
    logprob = [0.0] * n
    counts = [0] * n
    with ad.no_grad():
        for _ in range(decode_config.max_new_tokens):
            logits = _last_position_logits(config, params, prefixes, rows, vocab)
            ls = _log_softmax(logits)
            for i in range(n):
                if done[i]:
                    continue
                tok = top_k_sample(logits[i], decode_config.top_k, rngs[i])
                logprob[i] += float(ls[i, tok])
                counts[i] += 1
                if tok == vocab.eos_id:
                    done[i] = True
                else:
                    rows[i].append(tok)
            if all(done):
                break
    tokens = [r[1:] for r in rows]
    avg = [lp / max(c, 1) for lp, c in zip(logprob, counts)]
    return tokens, avg


def beam_search(config, params, vocab, prefix, decode_config, forced_tokens=()):
    """Beam decode from one prefix encoding.

    Returns (token ids without BOS/EOS, length-averaged log-prob, finished).
    Hypotheses are ranked by cumulative log-prob while growing; the winner is
    the finished hypothesis with the best length-normalized score. If nothing
    finishes within max_new_tokens, the best unfinished hypothesis is
    returned with finished=False. `forced_tokens` pins the first tokens of
    every hypothesis (used for conditioned re-generation).
    """
    beam = decode_config.beam_size
    hyps = [([vocab.bos_id], 0.0)]
    finished = []  # (tokens, total_lp, n_generated)
    with ad.no_grad():
        for step in range(decode_config.max_new_tokens):
            if len(finished) >= beam:
                break
            logits = _last_position_logits(
                config, params, [prefix] * len(hyps), [h[0] for h in hyps], vocab
            )
            ls = _log_softmax(logits)
            if step < len(forced_tokens):
                tok = forced_tokens[step]
                hyps = [(h + [tok], lp + float(ls[i, tok])) for i, (h, lp) in enumerate(hyps)]
                continue
            cand_scores = []
            for i, (h, lp) in enumerate(hyps):
                cand_scores.append(lp + ls[i])
            flat = np.concatenate(cand_scores)
            v = ls.shape[-1]
            # Deterministic order: score desc, then beam index, then token id.
            order = np.lexsort((np.arange(flat.size), -flat))
            next_hyps = []
            for j in order:
                i, tok = divmod(int(j), v)
                h, lp = hyps[i]
                score = float(flat[j])
                n_gen = (len(h) - 1) + 1
                if tok == vocab.eos_id:
                    finished.append((h[1:], score, n_gen))
                else:
                    next_hyps.append((h + [tok], score))
                if len(next_hyps) >= beam:
                    break
            if not next_hyps:
                break
            hyps = next_hyps
    if finished:
        best = max(finished, key=lambda f: (f[1] / f[2], -f[2]))
        return best[0], best[1] / best[2], True
    h, lp = hyps[0]
    n_gen = max(len(h) - 1, 1)
    return h[1:], lp / n_gen, False


def greedy_decode(config, params, vocab, prefix, decode_config):
    """Beam search with beam size 1."""
    cfg = replace(decode_config, beam_size=1)
    return beam_search(config, params, vocab, prefix, cfg)


def generate_candidates(config, gen_params, vocab, sample, decode_config, max_len=128):
    """One candidate per latent value z in {0..K-1}, decoded jointly.

    Each z draws from its own RNG substream, so candidate sets are
    reproducible and independent of batching or evaluation order.
    """
    k_latent = config.latent_k
    prefixes = [
        encode_context(
            sample,
            vocab,
            max_len=max_len,
            with_latent=True,
            latent_id=z,
            reserve=decode_config.max_new_tokens + 1,
        )
        for z in range(k_latent)
    ]
    rngs = [
        np.random.default_rng(np.random.SeedSequence([decode_config.seed, z]))
        for z in range(k_latent)
    ]
    tokens, avg = sample_decode(config, gen_params, vocab, prefixes, decode_config, rngs)
    return [
        Candidate(latent_id=z, token_ids=tokens[z], text=vocab.decode(tokens[z]), avg_logprob=avg[z])
        for z in range(k_latent)
    ]


# ---------------------------------------------------------------------------
# Scorers


def _candidate_sample(sample, candidate_text):
    return DialogueSample(context=sample.context, response=candidate_text, knowledge=sample.knowledge)


def score_coherence(config, eval_params, vocab, sample, candidates, max_len=128):
    """Fill each candidate's coherence with p(coherent | k, c, r)."""
    from .model import coherence_probs

    encs = [encode_joint(_candidate_sample(sample, c.text), vocab, max_len=max_len) for c in candidates]
    with ad.no_grad():
        batch = collate(encs, vocab.pad_id, bidirectional=True)
        probs = coherence_probs(config, eval_params, batch).data
    for c, p in zip(candidates, probs):
        c.coherence = float(p)
    return candidates


def _mean_response_logprob(config, params, vocab, samples, max_len=128):
    encs = [encode_sample(s, vocab, max_len=max_len) for s in samples]
    with ad.no_grad():
        batch = collate(encs, vocab.pad_id)
        logits, targets, _ = lm_logits(config, params, batch)
        ls = _log_softmax(logits.data)
        per_pos = ls[np.arange(targets.size), targets]
    out = []
    for b in range(batch.size):
        mask = batch.resp_rows == b
        out.append(float(per_pos[mask].mean()))
    return out


def score_forward(config, params, vocab, sample, candidates, max_len=128):
    """Length-averaged log p(r|c) under a latent-free scoring model."""
    samples = [_candidate_sample(sample, c.text) for c in candidates]
    scores = _mean_response_logprob(config, params, vocab, samples, max_len)
    for c, s in zip(candidates, scores):
        c.forward_score = s
    return candidates


def score_backward(config, params, vocab, sample, candidates, max_len=128):
    """Length-averaged log p(c|r): roles swapped, response becomes the prefix."""
    context_text = " ".join(sample.context)
    swapped = [
        DialogueSample(context=[c.text], response=context_text, knowledge=sample.knowledge)
        for c in candidates
    ]
    scores = _mean_response_logprob(config, params, vocab, swapped, max_len)
    for c, s in zip(candidates, scores):
        c.backward_score = s
    return candidates


def select(candidates):
    """Most coherent candidate; ties break toward the lower latent id."""
    if not candidates:
        raise ValueError("cannot select from an empty candidate set")
    for c in candidates:
        if c.coherence is None:
            raise ValueError("candidates must be coherence-scored before selection")
    return max(candidates, key=lambda c: (c.coherence, -c.latent_id))
