"""Tokenization, corpus records, and model-input assembly.

The tokenizer is whitespace word-level over a closed synthetic alphabet; the
Vocab interface hides that choice so a subword tokenizer could slot in later.
Assembled inputs follow a fixed layout: [slot?][knowledge][context][response],
with segment ids marking each span and positions numbered 0..L-1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

PAD = "<pad>"
UNK = "<unk>"
BOS = "<bos>"
EOS = "<eos>"
MASK = "<mask>"
LATENT = "<latent>"
CLS = "<cls>"
NAME_OPEN = "<name/>"
NAME_CLOSE = "</name>"
STATE_OPEN = "<state>"
STATE_CLOSE = "</state>"
ACT_OPEN = "<action>"
ACT_CLOSE = "</action>"

SPECIALS = (
    PAD,
    UNK,
    BOS,
    EOS,
    MASK,
    LATENT,
    CLS,
    NAME_OPEN,
    NAME_CLOSE,
    STATE_OPEN,
    STATE_CLOSE,
    ACT_OPEN,
    ACT_CLOSE,
)


class Vocab:
    """Bijective token<->id map with reserved specials at the lowest ids."""

    def __init__(self, words):
        self.id_to_token = list(SPECIALS)
        seen = set(SPECIALS)
        for w in words:
            if w not in seen:
                seen.add(w)
                self.id_to_token.append(w)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        self.pad_id = self.token_to_id[PAD]
        self.unk_id = self.token_to_id[UNK]
        self.bos_id = self.token_to_id[BOS]
        self.eos_id = self.token_to_id[EOS]
        self.mask_id = self.token_to_id[MASK]
        self.latent_id = self.token_to_id[LATENT]
        self.cls_id = self.token_to_id[CLS]
        self.special_ids = frozenset(range(len(SPECIALS)))

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, text):
        """Whitespace tokenize; out-of-vocabulary words map to UNK."""
        return [self.token_to_id.get(w, self.unk_id) for w in text.split()]

    def decode(self, ids):
        return " ".join(self.id_to_token[i] for i in ids)

    @classmethod
    def from_samples(cls, samples, extra_words=()):
        """Deterministic vocabulary over every word appearing in a corpus."""
        words = set(extra_words)
        for s in samples:
            for turn in s.context:
                words.update(turn.split())
            words.update(s.response.split())
            for fact in s.knowledge:
                words.update(fact.split())
            if s.belief_state:
                words.update(s.belief_state.split())
            if s.system_action:
                words.update(s.system_action.split())
        return cls(sorted(words - set(SPECIALS)))


@dataclass
class DialogueSample:
    """One training unit: context turns, response, optional grounding."""

    context: list[str]
    response: str
    knowledge: list[str] = field(default_factory=list)
    belief_state: str | None = None
    system_action: str | None = None
    cluster_id: int | None = None

    def to_record(self):
        rec = {"context": self.context, "response": self.response}
        if self.knowledge:
            rec["knowledge"] = self.knowledge
        if self.belief_state is not None:
            rec["belief_state"] = self.belief_state
        if self.system_action is not None:
            rec["system_action"] = self.system_action
        if self.cluster_id is not None:
            rec["cluster_id"] = self.cluster_id
        return rec

    @classmethod
    def from_record(cls, rec):
        return cls(
            context=list(rec["context"]),
            response=rec["response"],
            knowledge=list(rec.get("knowledge", [])),
            belief_state=rec.get("belief_state"),
            system_action=rec.get("system_action"),
            cluster_id=rec.get("cluster_id"),
        )


def save_corpus(samples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record(), sort_keys=True) + "\n")


def load_corpus(path):
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                samples.append(DialogueSample.from_record(json.loads(line)))
    return samples


@dataclass(frozen=True)
class SegmentScheme:
    """Fixed segment-id assignment for the input spans.

    context_alt, when set, gives every second context turn (counting back
    from the most recent) its own sub-segment to mark speaker alternation.
    """

    context: int = 0
    response: int = 1
    knowledge: int = 2
    slot: int = 3
    context_alt: int | None = None

    @property
    def count(self):
        ids = [self.context, self.response, self.knowledge, self.slot]
        if self.context_alt is not None:
            ids.append(self.context_alt)
        return max(ids) + 1


DEFAULT_SCHEME = SegmentScheme()


@dataclass
class EncodedInput:
    """Aligned id arrays plus span lengths; what the network consumes."""

    token_ids: np.ndarray
    segment_ids: np.ndarray
    position_ids: np.ndarray
    slot_len: int
    knowledge_len: int
    context_len: int
    response_len: int
    latent_id: int | None = None
    response_targets: np.ndarray | None = None

    @property
    def length(self):
        return self.slot_len + self.knowledge_len + self.context_len + self.response_len

    @property
    def prefix_len(self):
        return self.slot_len + self.knowledge_len + self.context_len


def _span_ids(vocab, texts, eos_id):
    """Tokenize each text and terminate it with EOS."""
    ids = []
    for t in texts:
        ids.append(vocab.encode(t) + [eos_id])
    return ids


def _assemble(vocab, scheme, slot_token, knowledge_spans, context_spans, response_in, max_len, context_is_alt=None):
    """Build the id arrays, truncating oldest context then oldest knowledge."""
    slot = [slot_token] if slot_token is not None else []
    fixed = len(slot) + len(response_in)
    if fixed > max_len:
        raise ValueError(
            f"response of length {len(response_in)} cannot fit max_len={max_len}"
        )
    knowledge_spans = list(knowledge_spans)
    context_spans = list(context_spans)
    context_is_alt = list(context_is_alt) if context_is_alt is not None else [False] * len(context_spans)

    def total():
        return fixed + sum(map(len, knowledge_spans)) + sum(map(len, context_spans))

    while total() > max_len and context_spans:
        context_spans.pop(0)
        context_is_alt.pop(0)
    while total() > max_len and knowledge_spans:
        knowledge_spans.pop(0)
    if total() > max_len:
        raise ValueError(f"sample does not fit within max_len={max_len}")

    tokens, segments = [], []
    for t in slot:
        tokens.append(t)
        segments.append(scheme.slot)
    for span in knowledge_spans:
        tokens.extend(span)
        segments.extend([scheme.knowledge] * len(span))
    for span, alt in zip(context_spans, context_is_alt):
        seg = scheme.context_alt if (alt and scheme.context_alt is not None) else scheme.context
        tokens.extend(span)
        segments.extend([seg] * len(span))
    tokens.extend(response_in)
    segments.extend([scheme.response] * len(response_in))

    n = len(tokens)
    return (
        np.asarray(tokens, dtype=np.int64),
        np.asarray(segments, dtype=np.int64),
        np.arange(n, dtype=np.int64),
        sum(map(len, knowledge_spans)),
        sum(map(len, context_spans)),
    )


def _alt_flags(n_turns):
    # Most recent turn is the partner's; alternate walking backwards.
    return [(n_turns - 1 - i) % 2 == 1 for i in range(n_turns)]


def encode_sample(sample, vocab, scheme=DEFAULT_SCHEME, max_len=128, with_latent=False, latent_id=None):
    """Generation-direction encoding: response enters as [BOS r1..rT].

    response_targets holds [r1..rT EOS], aligned position-for-position with
    the response slice of token_ids.
    """
    resp = vocab.encode(sample.response)
    if not resp:
        raise ValueError("sample response must be non-empty")
    response_in = [vocab.bos_id] + resp
    targets = resp + [vocab.eos_id]
    slot_token = vocab.latent_id if with_latent else None
    tokens, segments, positions, k_len, c_len = _assemble(
        vocab,
        scheme,
        slot_token,
        _span_ids(vocab, sample.knowledge, vocab.eos_id),
        _span_ids(vocab, sample.context, vocab.eos_id),
        response_in,
        max_len,
        _alt_flags(len(sample.context)),
    )
    return EncodedInput(
        token_ids=tokens,
        segment_ids=segments,
        position_ids=positions,
        slot_len=1 if with_latent else 0,
        knowledge_len=k_len,
        context_len=c_len,
        response_len=len(response_in),
        latent_id=latent_id if with_latent else None,
        response_targets=np.asarray(targets, dtype=np.int64),
    )


def encode_joint(sample, vocab, scheme=DEFAULT_SCHEME, max_len=128):
    """Understanding-direction encoding: CLS slot, response as [r1..rT EOS]."""
    resp = vocab.encode(sample.response)
    if not resp:
        raise ValueError("sample response must be non-empty")
    response_in = resp + [vocab.eos_id]
    tokens, segments, positions, k_len, c_len = _assemble(
        vocab,
        scheme,
        vocab.cls_id,
        _span_ids(vocab, sample.knowledge, vocab.eos_id),
        _span_ids(vocab, sample.context, vocab.eos_id),
        response_in,
        max_len,
        _alt_flags(len(sample.context)),
    )
    return EncodedInput(
        token_ids=tokens,
        segment_ids=segments,
        position_ids=positions,
        slot_len=1,
        knowledge_len=k_len,
        context_len=c_len,
        response_len=len(response_in),
    )


def encode_context(sample, vocab, scheme=DEFAULT_SCHEME, max_len=128, with_latent=False, latent_id=None, reserve=0):
    """Prefix-only encoding used to seed decoding; response part is empty.

    `reserve` leaves room for tokens to be generated within max_len.
    """
    prefix_budget = max_len - reserve
    slot_token = vocab.latent_id if with_latent else None
    tokens, segments, positions, k_len, c_len = _assemble(
        vocab,
        scheme,
        slot_token,
        _span_ids(vocab, sample.knowledge, vocab.eos_id),
        _span_ids(vocab, sample.context, vocab.eos_id),
        [],
        prefix_budget,
        _alt_flags(len(sample.context)),
    )
    return EncodedInput(
        token_ids=tokens,
        segment_ids=segments,
        position_ids=positions,
        slot_len=1 if with_latent else 0,
        knowledge_len=k_len,
        context_len=c_len,
        response_len=0,
        latent_id=latent_id if with_latent else None,
    )


def strip_knowledge(sample):
    """Copy of the sample with its knowledge segment removed (ablation)."""
    return replace(sample, knowledge=[])


def mlm_mask(encoded, rate, rng, vocab):
    """BERT-style masking of non-special tokens at the given rate.

    Returns (masked token ids, positions, original ids). 80% of chosen
    positions become MASK, 10% a random non-special token, 10% stay put.
    If the rate is positive but the draw selects nothing, one eligible
    position is forced so downstream losses are well-defined.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"mask rate must be in [0, 1), got {rate}")
    tokens = encoded.token_ids.copy()
    eligible = np.array(
        [i for i, t in enumerate(tokens) if int(t) not in vocab.special_ids],
        dtype=np.int64,
    )
    if rate == 0.0 or eligible.size == 0:
        return tokens, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    chosen = eligible[rng.random(eligible.size) < rate]
    if chosen.size == 0:
        chosen = np.array([eligible[rng.integers(eligible.size)]], dtype=np.int64)
    originals = tokens[chosen].copy()
    roll = rng.random(chosen.size)
    n_specials = len(SPECIALS)
    for pos, r in zip(chosen, roll):
        if r < 0.8:
            tokens[pos] = vocab.mask_id
        elif r < 0.9:
            tokens[pos] = rng.integers(n_specials, len(vocab))
        # else: keep the original token
    return tokens, chosen, originals
