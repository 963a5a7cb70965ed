"""The hybrid attention rule: bidirectional prefix, causal response suffix.

Shows the mask matrix itself, then demonstrates the consequence on a real
forward pass: perturbing a future response token leaves earlier logits
bitwise unchanged, while perturbing a context token moves every response
position.
"""

import numpy as np

from parlance.corpora import gen_open_domain_corpus
from parlance.data import Vocab, encode_sample
from parlance.model import ModelConfig, build_mask, forward_lm, init_parameters

# --- the rule as a matrix ----------------------------------------------------

print("prefix=3, response=3:")
print(build_mask(3, 3).astype(int))
print("\nprefix only (pure bidirectional):")
print(build_mask(3, 0).astype(int))
print("\nresponse only (pure causal):")
print(build_mask(0, 3).astype(int))

# --- consequences on the network ----------------------------------------------

corpus = gen_open_domain_corpus(0, 50)
vocab = Vocab.from_samples(corpus)
cfg = ModelConfig(vocab_size=len(vocab), n_layers=2, d_model=32, d_ff=64, n_heads=2)
params = init_parameters(cfg, np.random.default_rng(0), "stage1")

sample = corpus[0]
enc = encode_sample(sample, vocab)
base = forward_lm(cfg, params, enc, vocab.pad_id).data
print(f"\nsample: {sample.context} -> {sample.response!r}")
print(f"prefix length {enc.prefix_len}, response length {enc.response_len}")

# Perturb the LAST response token: every earlier position is bitwise identical.
pert = enc.token_ids.copy()
pert[-1] = vocab.encode("jazz")[0]
enc.token_ids = pert
future = forward_lm(cfg, params, enc, vocab.pad_id).data
same = [bool(np.array_equal(base[t], future[t])) for t in range(enc.response_len)]
print("\nafter perturbing the final response token, position-by-position equality:")
print(same, "<- only the final position changed")

# Perturb a CONTEXT token: everything downstream moves.
enc2 = encode_sample(sample, vocab)
enc2.token_ids[1] = vocab.encode("robotics")[0]
ctx = forward_lm(cfg, params, enc2, vocab.pad_id).data
changed = [not np.array_equal(base[t], ctx[t]) for t in range(enc2.response_len)]
print("\nafter perturbing a context token, positions changed:")
print(changed, "<- bidirectional prefix reaches every response position")
