"""A walk through the tensor core: forward ops, the tape, and gradients.

Everything downstream (transformers, losses, decoding) is built from the
handful of primitives exercised here. Run time: a second or two.
"""

import numpy as np

from parlance import autodiff as ad
from parlance.autodiff import Tensor

rng = np.random.default_rng(0)

# --- tensors and ops -------------------------------------------------------

a = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
b = Tensor([[0.5], [-1.0]], requires_grad=True)
out = a @ b
print("matmul:\n", out.data)

probs = ad.softmax(Tensor([1.0, 2.0, 3.0]))
print("softmax sums to", probs.data.sum(), "->", np.round(probs.data, 5))

# Stability: a huge logit does not overflow thanks to max-subtraction.
print("softmax([1000, 0]) =", ad.softmax(Tensor([1000.0, 0.0])).data)

# --- reverse mode ----------------------------------------------------------

loss = ad.sum_(ad.mul(out, out))
ad.backward(loss)
print("\nd loss / d a:\n", a.grad)
print("d loss / d b:\n", b.grad)

# Check one entry against central differences, the same oracle the test
# suite uses everywhere.
h = 1e-5
orig = a.data[0, 0]
a.data[0, 0] = orig + h
up = float(((a.data @ b.data) ** 2).sum())
a.data[0, 0] = orig - h
down = float(((a.data @ b.data) ** 2).sum())
a.data[0, 0] = orig
numeric = (up - down) / (2 * h)
print(f"\nanalytic {a.grad[0,0]:.8f} vs central-difference {numeric:.8f}")

# --- the stochastic op: straight-through Gumbel-Softmax ---------------------

logits = Tensor([2.0, 0.0, -1.0], requires_grad=True)
sample = ad.gumbel_softmax(logits, temperature=0.5, rng=np.random.default_rng(1))
print("\nhard gumbel sample (one-hot forward):", sample.data)
ad.backward(ad.sum_(ad.mul(sample, Tensor([1.0, 2.0, 3.0]))))
print("gradient flows through the soft sample:", np.round(logits.grad, 5))

# Counting argmaxes over many draws approaches softmax(logits) -- the
# Gumbel-argmax identity.
counts = np.zeros(3)
g = np.random.default_rng(2)
for _ in range(4000):
    counts[ad.gumbel_softmax(logits, 1.0, g).data.argmax()] += 1
print("empirical argmax freq:", counts / counts.sum())
print("softmax(logits)      :", np.round(ad.softmax(logits).data, 4))
