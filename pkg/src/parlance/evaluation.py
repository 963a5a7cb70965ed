"""Measurement helpers for trained models: accuracy, MI, discrimination."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .data import encode_joint, encode_sample
from .model import coherence_probs, collate, lm_logits, posterior_logits
from .training import sample_negative


def _chunks(n, size):
    for i in range(0, n, size):
        yield range(i, min(i + size, n))


def next_token_accuracy(config, params, vocab, samples, deterministic_only=False, batch_size=64, max_len=128):
    """Teacher-forced argmax accuracy over response positions.

    With deterministic_only, the first response position of every sample is
    excluded: in the one-to-many corpus that token picks the response cluster
    and is inherently unpredictable from the context alone.
    """
    encs = [encode_sample(s, vocab, max_len=max_len) for s in samples]
    correct = 0
    total = 0
    with ad.no_grad():
        for idx in _chunks(len(encs), batch_size):
            batch = collate([encs[j] for j in idx], vocab.pad_id)
            logits, targets, _ = lm_logits(config, params, batch)
            pred = logits.data.argmax(axis=-1)
            keep = np.ones(targets.size, dtype=bool)
            if deterministic_only:
                first = batch.prefix_lens[batch.resp_rows]
                keep = batch.resp_cols != first
            correct += int((pred[keep] == targets[keep]).sum())
            total += int(keep.sum())
    return correct / max(total, 1)


def posterior_assignments(config, params, vocab, samples, batch_size=64, max_len=128):
    """Argmax latent id per sample from the recognition head."""
    encs = [encode_joint(s, vocab, max_len=max_len) for s in samples]
    out = []
    with ad.no_grad():
        for idx in _chunks(len(encs), batch_size):
            batch = collate([encs[j] for j in idx], vocab.pad_id, bidirectional=True)
            logits = posterior_logits(config, params, batch)
            out.extend(logits.data.argmax(axis=-1).tolist())
    return np.asarray(out, dtype=np.int64)


def mutual_information_bits(xs, ys):
    """MI of two discrete sequences by exhaustive counting, in bits."""
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    if xs.size != ys.size or xs.size == 0:
        raise ValueError("sequences must be non-empty and aligned")
    n = xs.size
    mi = 0.0
    for x in np.unique(xs):
        px = (xs == x).mean()
        for y in np.unique(ys):
            pxy = ((xs == x) & (ys == y)).mean()
            if pxy > 0:
                py = (ys == y).mean()
                mi += pxy * math.log2(pxy / (px * py))
    return mi


def posterior_cluster_mi(config, params, vocab, samples, batch_size=64, max_len=128):
    """MI between recognized latent and ground-truth response cluster."""
    clusters = [s.cluster_id for s in samples]
    if any(c is None for c in clusters):
        raise ValueError("samples must carry cluster_id ground truth")
    zs = posterior_assignments(config, params, vocab, samples, batch_size, max_len)
    return mutual_information_bits(zs, np.asarray(clusters))


def coherence_scores(config, params, vocab, samples, batch_size=64, max_len=128):
    """Coherence probability per (context, response [, knowledge]) sample."""
    encs = [encode_joint(s, vocab, max_len=max_len) for s in samples]
    out = []
    with ad.no_grad():
        for idx in _chunks(len(encs), batch_size):
            batch = collate([encs[j] for j in idx], vocab.pad_id, bidirectional=True)
            out.extend(coherence_probs(config, params, batch).data.tolist())
    return np.asarray(out)


def coherence_accuracy(config, params, vocab, samples, rng, negative_pool=None, batch_size=64, max_len=128):
    """Golden-vs-random-negative discrimination accuracy at threshold 0.5."""
    pool = negative_pool if negative_pool is not None else [s.response for s in samples]
    negatives = []
    for s in samples:
        neg = sample_negative(pool, s.response, rng)
        negatives.append(type(s)(context=s.context, response=neg, knowledge=s.knowledge))
    p_pos = coherence_scores(config, params, vocab, samples, batch_size, max_len)
    p_neg = coherence_scores(config, params, vocab, negatives, batch_size, max_len)
    hits = int((p_pos > 0.5).sum()) + int((p_neg < 0.5).sum())
    return hits / (2 * len(samples))
