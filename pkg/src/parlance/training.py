"""Training objectives and the two-stage curriculum schedule.

Stage 1 fits the coarse one-to-one mapping with plain next-token NLL. Stage 2
trains two models initialized from stage 1: a fine-grained generator whose
K-way latent is recognized from (context, response) and sampled through a
straight-through Gumbel-Softmax (NLL + bag-of-words objective), and an
evaluation model that scores response coherence against sampled negatives
(RCE + masked-token objective).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import encode_joint, encode_sample, mlm_mask
from .model import (
    Parameters,
    coherence_logits,
    collate,
    forward_bow,
    init_parameters,
    lm_logits,
    mlm_logits,
    posterior_logits,
)

STAGE1 = "stage1"
STAGE2_GEN = "stage2-gen"
STAGE2_EVAL = "stage2-eval"


@dataclass
class TrainConfig:
    batch_size: int = 32
    stage1_epochs: int = 10
    stage2_epochs: int = 6
    lr: float = 2e-3
    warmup_steps: int = 100
    mlm_rate: float = 0.15
    gumbel_start: float = 1.0
    gumbel_end: float = 0.1
    seed: int = 0
    max_len: int = 128
    early_stop_accuracy: float | None = None
    init_stage2_from_stage1: bool = True
    # Per-stage overrides (None = inherit). The latent generator prefers a
    # gentler rate than the discriminative stages; the coherence model needs
    # small batches (more steps per sample) to break its initial symmetry.
    gen_lr: float | None = 1e-3
    gen_batch_size: int | None = None
    eval_lr: float | None = None
    eval_batch_size: int | None = 16
    # Negative sampling policy for the coherence objective. "corpus" draws
    # uniformly from other responses; "corpus+shuffle" additionally corrupts
    # the golden response's word order for a fraction of samples, so the
    # model also learns that disordered text is incoherent. Shuffles only
    # start at shuffle_from_epoch: same-bag-of-words negatives contradict
    # the word-identity features the model needs while it is still breaking
    # its initial symmetry, and enabling them too early stalls training.
    negative_policy: str = "corpus+shuffle"
    shuffle_negative_rate: float = 0.25
    shuffle_from_epoch: int = 5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.mlm_rate < 1.0:
            raise ValueError("mlm_rate must lie in (0, 1)")
        if not 0.0 < self.gumbel_end <= self.gumbel_start:
            raise ValueError("gumbel temperature must stay positive and non-increasing")
        if self.negative_policy not in ("corpus", "corpus+shuffle"):
            raise ValueError(f"unknown negative policy {self.negative_policy!r}")
        if not 0.0 <= self.shuffle_negative_rate < 1.0:
            raise ValueError("shuffle_negative_rate must lie in [0, 1)")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def lr_at(step, base, warmup, total):
    """Linear warmup to `base`, then cosine decay to zero."""
    if step <= warmup:
        return base * step / max(warmup, 1)
    span = max(total - warmup, 1)
    return base * 0.5 * (1.0 + math.cos(math.pi * (step - warmup) / span))


def gumbel_temperature(step, total, start, end):
    """Exponential decay from start to end across the stage."""
    if total <= 1:
        return end
    frac = min(step / (total - 1), 1.0)
    return start * (end / start) ** frac


class Adam:
    """Adaptive-moment optimizer with bias correction and an lr schedule."""

    def __init__(self, params, base_lr, warmup_steps, total_steps, beta1=0.9, beta2=0.999, eps=1e-8):
        self.base_lr = base_lr
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}

    def update(self, params):
        self.step_count += 1
        lr = lr_at(self.step_count, self.base_lr, self.warmup_steps, self.total_steps)
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for name, t in params.tensors.items():
            if t.grad is None:
                continue
            g = t.grad
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            t.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        """Snapshot of the moments; copies, so later updates don't leak in."""
        out = {}
        for name in self.m:
            out[f"m.{name}"] = self.m[name].copy()
            out[f"v.{name}"] = self.v[name].copy()
        return out

    def load_state_arrays(self, arrays, step_count):
        for name in self.m:
            self.m[name] = arrays[f"m.{name}"].copy()
            self.v[name] = arrays[f"v.{name}"].copy()
        self.step_count = step_count


# ---------------------------------------------------------------------------
# Objectives


def loss_stage1(config, params, batch):
    """Mean token NLL over response positions only (context carries no loss)."""
    logits, targets, _ = lm_logits(config, params, batch)
    return ad.cross_entropy(logits, targets)


def loss_generation(config, params, gen_batch, joint_batch, temperature, rng, eos_id):
    """Latent-conditioned NLL plus bag-of-words loss.

    z is sampled per example from the recognition distribution through a
    hard Gumbel-Softmax, so exactly one latent row feeds generation while
    gradients flow through the soft sample. Returns (total, nll, bow) where
    total = nll + bow exactly; bow is the per-sample sum over response words
    (order-free), averaged over the batch.
    """
    post = posterior_logits(config, params, joint_batch)
    z_onehot = ad.gumbel_softmax(post, temperature, rng, hard=True)
    override = ad.matmul(z_onehot, params["latent_emb"])
    logits, targets, hidden = lm_logits(config, params, gen_batch, slot_override=override)
    nll = ad.cross_entropy(logits, targets)

    keep = targets != eos_id  # predict response words, not the terminator
    word_rows = gen_batch.resp_rows[keep]
    word_targets = targets[keep]
    # Canonical (row, token) order makes the loss bitwise invariant to any
    # permutation of each response: the summation order never changes.
    order = np.lexsort((word_targets, word_rows))
    word_rows = word_rows[order]
    word_targets = word_targets[order]
    bow_all = forward_bow(params, hidden[:, 0])
    bow_ce = ad.cross_entropy(bow_all[word_rows], word_targets)
    bow = ad.mul(bow_ce, ad.Tensor(word_targets.size / gen_batch.size))

    total = ad.add(nll, bow)
    return total, nll, bow


def loss_evaluation(config, params, pos_batch, neg_batch, masked_batch, mask_rows, mask_cols, mask_targets):
    """Coherence discrimination plus masked-token loss; total = rce + mlm."""
    pos_logits = coherence_logits(config, params, pos_batch)
    neg_logits = coherence_logits(config, params, neg_batch)
    rce = ad.add(
        ad.binary_cross_entropy_with_logits(pos_logits, np.ones(pos_batch.size)),
        ad.binary_cross_entropy_with_logits(neg_logits, np.zeros(neg_batch.size)),
    )
    logits = mlm_logits(config, params, masked_batch, mask_rows, mask_cols)
    mlm = ad.cross_entropy(logits, mask_targets)
    total = ad.add(rce, mlm)
    return total, rce, mlm


def sample_negative(responses, positive, rng):
    """Uniform draw from `responses` whose token sequence differs from `positive`."""
    norm = " ".join(positive.split())
    if all(" ".join(r.split()) == norm for r in responses):
        raise ValueError("corpus has no response distinct from the positive")
    while True:
        cand = responses[rng.integers(len(responses))]
        if " ".join(cand.split()) != norm:
            return cand


def shuffled_negative(positive, rng):
    """Word-order corruption of the positive; None when no reordering exists."""
    words = positive.split()
    if len(set(words)) < 2:
        return None
    for _ in range(10):
        perm = [words[i] for i in rng.permutation(len(words))]
        if perm != words:
            return " ".join(perm)
    return None


def draw_negative(responses, positive, rng, policy="corpus", shuffle_rate=0.0):
    """Negative per the configured policy; always differs from the positive."""
    if policy == "corpus+shuffle" and rng.random() < shuffle_rate:
        shuffled = shuffled_negative(positive, rng)
        if shuffled is not None:
            return shuffled
    return sample_negative(responses, positive, rng)


# ---------------------------------------------------------------------------
# Trainer


@dataclass
class StageState:
    """Everything needed to resume a stage bit-for-bit at an epoch boundary."""

    stage: str
    epoch: int
    step: int
    adam_step: int
    rng_state: dict
    optimizer_arrays: dict = field(repr=False, default_factory=dict)


class Trainer:
    """Owns parameters, optimizer and the RNG stream for one curriculum run."""

    def __init__(self, model_config, train_config, vocab):
        self.model_config = model_config
        self.train_config = train_config
        self.vocab = vocab
        self.records = []

    # -- shared machinery

    def _log(self, step, stage, loss, parts):
        rec = {"step": step, "stage": stage, "loss": float(loss), "parts": parts}
        self.records.append(rec)
        return rec

    def _check_finite(self, loss, stage, step, parts):
        if not np.isfinite(loss.data):
            raise RuntimeError(
                f"non-finite loss at stage={stage} step={step}: loss={loss.data!r} parts={parts}"
            )

    def _batches(self, n, rng, batch_size):
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield order[i : i + batch_size]

    def _steps_per_epoch(self, n, batch_size):
        return (n + batch_size - 1) // batch_size

    def _stage_rngs(self, stage_tag):
        """Independent, reproducible streams per stage: (init, train)."""
        root = np.random.SeedSequence([self.train_config.seed, _STAGE_SEEDS[stage_tag]])
        init_ss, train_ss = root.spawn(2)
        return np.random.default_rng(init_ss), np.random.default_rng(train_ss)

    # -- stage 1

    def train_stage1(self, samples, epochs=None, params=None, resume=None, holdout=None, on_epoch=None):
        """Coarse one-to-one generation model; returns trained Parameters.

        With early_stop_accuracy set and holdout samples given, training ends
        at the first epoch whose teacher-forced next-token accuracy on the
        deterministic slice reaches the target.
        """
        from .evaluation import next_token_accuracy

        cfg, tc = self.model_config, self.train_config
        epochs = tc.stage1_epochs if epochs is None else epochs
        init_rng, train_rng = self._stage_rngs(STAGE1)
        if params is None:
            params = init_parameters(cfg, init_rng, "stage1")
        encs = [encode_sample(s, self.vocab, max_len=tc.max_len) for s in samples]
        bs = tc.batch_size
        total_steps = epochs * self._steps_per_epoch(len(encs), bs)
        adam = Adam(params, tc.lr, tc.warmup_steps, total_steps)
        step = 0
        start_epoch = 0
        if resume is not None:
            start_epoch = resume.epoch
            step = resume.step
            train_rng.bit_generator.state = resume.rng_state
            adam.load_state_arrays(resume.optimizer_arrays, resume.adam_step)

        for epoch in range(start_epoch, epochs):
            for idx in self._batches(len(encs), train_rng, bs):
                batch = collate([encs[j] for j in idx], self.vocab.pad_id)
                loss = loss_stage1(cfg, params, batch)
                parts = {"nll": float(loss.data)}
                self._check_finite(loss, STAGE1, step, parts)
                params.zero_grad()
                ad.backward(loss)
                adam.update(params)
                step += 1
                self._log(step, STAGE1, loss.data, parts)
            if on_epoch is not None:
                state = StageState(
                    STAGE1, epoch + 1, step, adam.step_count,
                    train_rng.bit_generator.state, adam.state_arrays(),
                )
                on_epoch(params, state)
            if tc.early_stop_accuracy is not None and holdout:
                acc = next_token_accuracy(cfg, params, self.vocab, holdout, deterministic_only=True)
                if acc >= tc.early_stop_accuracy:
                    break
        return params

    # -- stage 2: fine-grained generation

    def train_generation(self, samples, stage1_params=None, epochs=None, params=None, resume=None, on_epoch=None):
        cfg, tc = self.model_config, self.train_config
        epochs = tc.stage2_epochs if epochs is None else epochs
        init_rng, train_rng = self._stage_rngs(STAGE2_GEN)
        if params is None:
            params = init_parameters(cfg, init_rng, "generation")
            if stage1_params is not None and tc.init_stage2_from_stage1:
                params.copy_from(stage1_params)
        gen_encs = [
            encode_sample(s, self.vocab, max_len=tc.max_len, with_latent=True) for s in samples
        ]
        joint_encs = [encode_joint(s, self.vocab, max_len=tc.max_len) for s in samples]
        bs = tc.gen_batch_size or tc.batch_size
        lr = tc.gen_lr or tc.lr
        total_steps = epochs * self._steps_per_epoch(len(samples), bs)
        adam = Adam(params, lr, tc.warmup_steps, total_steps)
        step = 0
        start_epoch = 0
        if resume is not None:
            start_epoch = resume.epoch
            step = resume.step
            train_rng.bit_generator.state = resume.rng_state
            adam.load_state_arrays(resume.optimizer_arrays, resume.adam_step)
        for epoch in range(start_epoch, epochs):
            for idx in self._batches(len(samples), train_rng, bs):
                gen_batch = collate([gen_encs[j] for j in idx], self.vocab.pad_id)
                joint_batch = collate([joint_encs[j] for j in idx], self.vocab.pad_id, bidirectional=True)
                tau = gumbel_temperature(step, total_steps, tc.gumbel_start, tc.gumbel_end)
                total, nll, bow = loss_generation(
                    cfg, params, gen_batch, joint_batch, tau, train_rng, self.vocab.eos_id
                )
                parts = {"nll": float(nll.data), "bow": float(bow.data), "tau": tau}
                self._check_finite(total, STAGE2_GEN, step, parts)
                params.zero_grad()
                ad.backward(total)
                adam.update(params)
                step += 1
                self._log(step, STAGE2_GEN, total.data, parts)
            if on_epoch is not None:
                state = StageState(
                    STAGE2_GEN, epoch + 1, step, adam.step_count,
                    train_rng.bit_generator.state, adam.state_arrays(),
                )
                on_epoch(params, state)
        return params

    # -- stage 2: evaluation (coherence) model

    def train_evaluation(self, samples, stage1_params=None, epochs=None, params=None, resume=None, on_epoch=None):
        cfg, tc = self.model_config, self.train_config
        epochs = tc.stage2_epochs if epochs is None else epochs
        init_rng, train_rng = self._stage_rngs(STAGE2_EVAL)
        if params is None:
            params = init_parameters(cfg, init_rng, "evaluation")
            if stage1_params is not None and tc.init_stage2_from_stage1:
                params.copy_from(stage1_params)
        pos_encs = [encode_joint(s, self.vocab, max_len=tc.max_len) for s in samples]
        responses = [s.response for s in samples]
        bs = tc.eval_batch_size or tc.batch_size
        lr = tc.eval_lr or tc.lr
        total_steps = epochs * self._steps_per_epoch(len(samples), bs)
        adam = Adam(params, lr, tc.warmup_steps, total_steps)
        step = 0
        start_epoch = 0
        if resume is not None:
            start_epoch = resume.epoch
            step = resume.step
            train_rng.bit_generator.state = resume.rng_state
            adam.load_state_arrays(resume.optimizer_arrays, resume.adam_step)
        for epoch in range(start_epoch, epochs):
            # Fresh negatives and fresh masks each epoch, all from the one stream.
            shuffle_rate = tc.shuffle_negative_rate if epoch >= tc.shuffle_from_epoch else 0.0
            neg_encs = []
            for s in samples:
                neg = draw_negative(
                    responses, s.response, train_rng,
                    policy=tc.negative_policy, shuffle_rate=shuffle_rate,
                )
                neg_encs.append(
                    encode_joint(
                        type(s)(context=s.context, response=neg, knowledge=s.knowledge),
                        self.vocab,
                        max_len=tc.max_len,
                    )
                )
            masked = [mlm_mask(e, tc.mlm_rate, train_rng, self.vocab) for e in pos_encs]
            for idx in self._batches(len(samples), train_rng, bs):
                pos_batch = collate([pos_encs[j] for j in idx], self.vocab.pad_id, bidirectional=True)
                neg_batch = collate([neg_encs[j] for j in idx], self.vocab.pad_id, bidirectional=True)
                mrows, mcols, mtargets = [], [], []
                masked_encs = []
                for row, j in enumerate(idx):
                    tokens, positions, originals = masked[j]
                    e = pos_encs[j]
                    masked_encs.append(
                        type(e)(
                            token_ids=tokens,
                            segment_ids=e.segment_ids,
                            position_ids=e.position_ids,
                            slot_len=e.slot_len,
                            knowledge_len=e.knowledge_len,
                            context_len=e.context_len,
                            response_len=e.response_len,
                        )
                    )
                    mrows.extend([row] * len(positions))
                    mcols.extend(positions.tolist())
                    mtargets.extend(originals.tolist())
                masked_batch = collate(masked_encs, self.vocab.pad_id, bidirectional=True)
                total, rce, mlm = loss_evaluation(
                    cfg,
                    params,
                    pos_batch,
                    neg_batch,
                    masked_batch,
                    np.asarray(mrows, dtype=np.int64),
                    np.asarray(mcols, dtype=np.int64),
                    np.asarray(mtargets, dtype=np.int64),
                )
                parts = {"rce": float(rce.data), "mlm": float(mlm.data)}
                self._check_finite(total, STAGE2_EVAL, step, parts)
                params.zero_grad()
                ad.backward(total)
                adam.update(params)
                step += 1
                self._log(step, STAGE2_EVAL, total.data, parts)
            if on_epoch is not None:
                state = StageState(
                    STAGE2_EVAL, epoch + 1, step, adam.step_count,
                    train_rng.bit_generator.state, adam.state_arrays(),
                )
                on_epoch(params, state)
        return params


_STAGE_SEEDS = {STAGE1: 1, STAGE2_GEN: 2, STAGE2_EVAL: 3}


@dataclass
class CurriculumResult:
    stage1: Parameters
    generation: Parameters
    evaluation: Parameters
    records: list
    vocab: object


def run_curriculum(samples, model_config, train_config, vocab, holdout=None):
    """Stage 1 first; both stage-2 models start from the stage-1 weights."""
    trainer = Trainer(model_config, train_config, vocab)
    stage1 = trainer.train_stage1(samples, holdout=holdout)
    generation = trainer.train_generation(samples, stage1_params=stage1)
    evaluation = trainer.train_evaluation(samples, stage1_params=stage1)
    return CurriculumResult(stage1, generation, evaluation, trainer.records, vocab)


def write_loss_log(records, path):
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
