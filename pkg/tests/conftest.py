"""Shared fixtures.

The tiny_* fixtures build micro models in seconds for interface tests. The
*_world fixtures run the real curriculum at acceptance scale and are only
constructed when the acceptance module asks for them.
"""

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from parlance.cli import main as cli_main
from parlance.corpora import gen_knowledge_corpus, gen_open_domain_corpus
from parlance.data import Vocab
from parlance.model import ModelConfig
from parlance.training import TrainConfig, Trainer

ACCEPT_SEED = 11


# ---------------------------------------------------------------------------
# Micro artifacts for CLI/server interface tests


@pytest.fixture(scope="session")
def tiny_open_artifacts(tmp_path_factory):
    base = tmp_path_factory.mktemp("tiny")
    corpus_path = base / "open.jsonl"
    assert cli_main(["gen-corpus", "--kind", "open", "--n", "120", "--seed", "5",
                     "--out", str(corpus_path)]) == 0
    outdir = base / "artifacts" / "open"
    rc = cli_main([
        "train", "--corpus", str(corpus_path), "--mode", "open", "--outdir", str(outdir),
        "--seed", "5", "--set", "model.n_layers = 1", "--set", "model.d_model = 16",
        "--set", "model.d_ff = 32", "--set", "model.n_heads = 2", "--set", "model.latent_k = 2",
        "--set", "train.stage1_epochs = 1", "--set", "train.stage2_epochs = 1",
        "--set", "train.warmup_steps = 5", "--set", "train.early_stop_accuracy = none",
    ])
    assert rc == 0
    return outdir, corpus_path


@pytest.fixture(scope="session")
def tiny_task_artifacts(tiny_open_artifacts):
    outdir, _ = tiny_open_artifacts
    base = outdir.parent.parent
    corpus_path = base / "task.jsonl"
    db_path = base / "db.jsonl"
    assert cli_main(["gen-corpus", "--kind", "task", "--n", "60", "--seed", "5",
                     "--out", str(corpus_path), "--db-out", str(db_path)]) == 0
    task_dir = base / "artifacts" / "task"
    rc = cli_main([
        "train", "--corpus", str(corpus_path), "--mode", "task", "--outdir", str(task_dir),
        "--db", str(db_path), "--seed", "5",
        "--set", "model.n_layers = 2", "--set", "model.d_model = 48",
        "--set", "model.d_ff = 96", "--set", "model.n_heads = 2",
        "--set", "model.max_positions = 160",
        "--set", "train.stage1_epochs = 6", "--set", "train.batch_size = 16",
        "--set", "train.warmup_steps = 20", "--set", "train.max_len = 160",
        "--set", "train.early_stop_accuracy = 0.97",
    ])
    assert rc == 0
    return base / "artifacts"


# ---------------------------------------------------------------------------
# Acceptance-scale worlds (trained once per session, on demand)


@dataclass
class OpenWorld:
    corpus: list
    train: list
    held: list
    vocab: Vocab
    config: ModelConfig
    stage1: object
    generation: object
    generation_early: object  # one-epoch snapshot: imperfect candidate pool
    evaluation: object
    records: list
    stage1_epochs_used: int


@pytest.fixture(scope="session")
def open_world():
    corpus = gen_open_domain_corpus(ACCEPT_SEED, 5500)
    train, held = corpus[:5000], corpus[5000:]
    vocab = Vocab.from_samples(corpus)
    config = ModelConfig(vocab_size=len(vocab))  # toy default: 4L/4H/128/512, K=8
    tc = TrainConfig(
        seed=ACCEPT_SEED,
        stage1_epochs=10,
        stage2_epochs=5,
        early_stop_accuracy=0.97,
    )
    trainer = Trainer(config, tc, vocab)
    stage1 = trainer.train_stage1(train, holdout=held)
    steps_per_epoch = (len(train) + tc.batch_size - 1) // tc.batch_size
    stage1_epochs_used = len([r for r in trainer.records if r["stage"] == "stage1"]) // steps_per_epoch
    snapshots = {}

    def capture(params, state):
        if state.epoch == 1:
            snapshots["gen_early"] = params.clone()

    generation = trainer.train_generation(train[:2500], stage1_params=stage1, on_epoch=capture)
    evaluation = trainer.train_evaluation(train[:1200], stage1_params=stage1, epochs=10)
    return OpenWorld(
        corpus=corpus,
        train=train,
        held=held,
        vocab=vocab,
        config=config,
        stage1=stage1,
        generation=generation,
        generation_early=snapshots["gen_early"],
        evaluation=evaluation,
        records=trainer.records,
        stage1_epochs_used=max(stage1_epochs_used, 1),
    )


@dataclass
class KnowledgeWorld:
    train: list
    held: list
    vocab: Vocab
    config: ModelConfig
    stage1: object
    generation: object


@pytest.fixture(scope="session")
def knowledge_world():
    corpus = gen_knowledge_corpus(ACCEPT_SEED, 2150)
    train, held = corpus[:2000], corpus[2000:]
    vocab = Vocab.from_samples(corpus)
    config = ModelConfig(vocab_size=len(vocab))
    tc = TrainConfig(seed=ACCEPT_SEED, stage1_epochs=3, stage2_epochs=5)
    trainer = Trainer(config, tc, vocab)
    stage1 = trainer.train_stage1(train)
    generation = trainer.train_generation(train, stage1_params=stage1)
    return KnowledgeWorld(
        train=train, held=held, vocab=vocab, config=config,
        stage1=stage1, generation=generation,
    )


@dataclass
class TaskWorld:
    db: object
    vocab: Vocab
    config: ModelConfig
    params: object
    bot: object


@pytest.fixture(scope="session")
def task_world():
    from parlance.taskbot import NeuralBot, default_database, gen_task_corpus, task_training_samples

    db = default_database()
    dialogues = gen_task_corpus(ACCEPT_SEED, 360, db)
    samples = task_training_samples(dialogues)
    vocab = Vocab.from_samples(samples)
    config = ModelConfig(
        vocab_size=len(vocab), n_layers=3, d_model=96, d_ff=384, n_heads=4, max_positions=160
    )
    tc = TrainConfig(
        seed=ACCEPT_SEED, stage1_epochs=15, batch_size=16, warmup_steps=60,
        max_len=160, early_stop_accuracy=0.985,
    )
    trainer = Trainer(config, tc, vocab)
    held = samples[-100:]
    params = trainer.train_stage1(samples[:-100], holdout=held)
    bot = NeuralBot(config, params, vocab, db, max_len=160)
    return TaskWorld(db=db, vocab=vocab, config=config, params=params, bot=bot)
