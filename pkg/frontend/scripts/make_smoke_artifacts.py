"""Build micro checkpoints for the console smoke test (all three modes)."""

import sys
from pathlib import Path

from parlance.cli import main

MICRO = [
    "--set", "model.n_layers = 1", "--set", "model.d_model = 16",
    "--set", "model.d_ff = 32", "--set", "model.n_heads = 2",
    "--set", "model.latent_k = 2", "--set", "train.stage1_epochs = 1",
    "--set", "train.stage2_epochs = 1", "--set", "train.warmup_steps = 5",
    "--set", "train.early_stop_accuracy = none",
]


def build(base):
    base = Path(base)
    base.mkdir(parents=True, exist_ok=True)
    done = base / ".complete"
    if done.exists():
        return

    open_corpus = base / "open.jsonl"
    assert main(["gen-corpus", "--kind", "open", "--n", "120", "--seed", "5", "--out", str(open_corpus)]) == 0
    assert main(["train", "--corpus", str(open_corpus), "--mode", "open",
                 "--outdir", str(base / "open"), "--seed", "5", *MICRO]) == 0

    know_corpus = base / "knowledge.jsonl"
    assert main(["gen-corpus", "--kind", "knowledge", "--n", "120", "--seed", "5", "--out", str(know_corpus)]) == 0
    assert main(["train", "--corpus", str(know_corpus), "--mode", "knowledge",
                 "--outdir", str(base / "knowledge"), "--seed", "5", *MICRO]) == 0

    task_corpus = base / "task.jsonl"
    db_path = base / "db_src.jsonl"
    assert main(["gen-corpus", "--kind", "task", "--n", "60", "--seed", "5",
                 "--out", str(task_corpus), "--db-out", str(db_path)]) == 0
    assert main([
        "train", "--corpus", str(task_corpus), "--mode", "task",
        "--outdir", str(base / "task"), "--db", str(db_path), "--seed", "5",
        "--set", "model.n_layers = 2", "--set", "model.d_model = 48",
        "--set", "model.d_ff = 96", "--set", "model.n_heads = 2",
        "--set", "model.max_positions = 160", "--set", "train.stage1_epochs = 6",
        "--set", "train.batch_size = 16", "--set", "train.warmup_steps = 20",
        "--set", "train.max_len = 160", "--set", "train.early_stop_accuracy = 0.97",
    ]) == 0
    done.write_text("ok\n")


if __name__ == "__main__":
    build(sys.argv[1])
    print("smoke artifacts ready")
