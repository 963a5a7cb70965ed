"""Per-latent candidate generation and coherence-based selection.

Trains a small two-stage setup, then for one held-out context decodes one
candidate per latent value, scores each with the three scorers (coherence,
forward likelihood, backward likelihood), and picks the coherence argmax.
Runs in a couple of minutes.
"""

import numpy as np

from parlance.corpora import OpenDomainGrammar, gen_open_domain_corpus
from parlance.data import Vocab
from parlance.decoding import (
    DecodeConfig,
    generate_candidates,
    score_backward,
    score_coherence,
    score_forward,
    select,
)
from parlance.model import ModelConfig
from parlance.training import TrainConfig, Trainer

corpus = gen_open_domain_corpus(seed=3, n=900)
train, held = corpus[:800], corpus[800:]
vocab = Vocab.from_samples(corpus)
cfg = ModelConfig(vocab_size=len(vocab))
trainer = Trainer(cfg, TrainConfig(seed=3, stage1_epochs=2, stage2_epochs=4), vocab)

stage1 = trainer.train_stage1(train)
generation = trainer.train_generation(train, stage1_params=stage1)
evaluation = trainer.train_evaluation(train[:600], stage1_params=stage1, epochs=8)

grammar = OpenDomainGrammar()
sample = held[0]
print("context:", sample.context)
print("valid responses per the grammar:")
for i, r in enumerate(grammar.valid_responses(sample.context)):
    print(f"  cluster {i}: {r}")

dc = DecodeConfig(top_k=20, max_new_tokens=16, seed=42)
candidates = generate_candidates(cfg, generation, vocab, sample, dc)
score_coherence(cfg, evaluation, vocab, sample, candidates)
score_forward(cfg, stage1, vocab, sample, candidates)
score_backward(cfg, stage1, vocab, sample, candidates)

print(f"\n{'z':>2} {'coherence':>9} {'forward':>8} {'backward':>8}  candidate")
for c in candidates:
    cluster = grammar.cluster_of(sample.context, c.text)
    tag = f"(cluster {cluster})" if cluster is not None else "(invalid)"
    print(f"{c.latent_id:>2} {c.coherence:>9.4f} {c.forward_score:>8.3f} {c.backward_score:>8.3f}  {c.text!r} {tag}")

winner = select(candidates)
print(f"\nselected by coherence: z={winner.latent_id}: {winner.text!r}")
