"""The two-phase task engine, from scripted policy to trained bot.

First the rule-based oracle policy shows the intended conversation shape
(clarification, DB lookups, request answering). Then a model is trained on
dialogues generated by that policy and driven through the simulator, with
the per-turn trace printed: belief state, action refresh, and whether the
second generation phase fired.
"""

import numpy as np

from parlance.data import Vocab
from parlance.model import ModelConfig
from parlance.taskbot import (
    NeuralBot,
    OracleBot,
    default_database,
    gen_task_corpus,
    sample_goals,
    simulate,
    success_rate,
    task_training_samples,
)
from parlance.training import TrainConfig, Trainer

db = default_database()
print("database:", ", ".join(f"{r.name}" for r in db.records[:4]), "...")

# --- the scripted policy ------------------------------------------------------

goal = [g for g in sample_goals(db, np.random.default_rng(8), 40) if g.ambiguous][0]
print("\nuser goal:", goal.domain, goal.constraints, "requests:", goal.requests)
outcome = simulate(goal, OracleBot(db), db, seed=1)
for i, turn in enumerate(outcome.turns):
    print(f"  {'user' if i % 2 == 0 else ' bot'}> {turn}")

# --- train the neural bot on scripted dialogues --------------------------------

dialogues = gen_task_corpus(seed=8, n=250, db=db)
samples = task_training_samples(dialogues)
vocab = Vocab.from_samples(samples)
print(f"\n{len(samples)} annotated turns; target layout example:")
print(" ", samples[0].response[:90], "...")

cfg = ModelConfig(vocab_size=len(vocab), n_layers=3, d_model=96, d_ff=384, n_heads=4, max_positions=160)
tc = TrainConfig(seed=8, stage1_epochs=12, batch_size=16, max_len=160,
                 warmup_steps=60, early_stop_accuracy=0.98)
trainer = Trainer(cfg, tc, vocab)
params = trainer.train_stage1(samples[:-80], holdout=samples[-80:])
bot = NeuralBot(cfg, params, vocab, db, max_len=160)

# --- drive it, showing the trace ------------------------------------------------

outcome = simulate(goal, bot, db, seed=2)
print("\ntrained bot on the same goal:")
user_turns = outcome.turns[0::2]
bot_turns = outcome.turns[1::2]
for i, (u, t) in enumerate(zip(user_turns, bot_turns)):
    trace = outcome.traces[i]
    print(f"  user> {u}")
    print(f"   bot> {t}")
    print(f"        [state: {trace.state_span!r} | action {trace.predicted_action!r} -> "
          f"{trace.refreshed_action!r} | {trace.n_records} records | phase2={trace.phase2}]")
print("success without grounding:", outcome.success_without_grounding,
      "| with grounding:", outcome.success_with_grounding)

# --- the headline metric --------------------------------------------------------

goals = sample_goals(db, np.random.default_rng(77), 25)
metrics, _ = success_rate(goals, bot, db, seed=5)
print("\nover 25 fresh goals:", metrics)
