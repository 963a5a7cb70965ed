"""Command-line entry points.

Subcommands: gen-corpus, train, chat, score, simulate, metrics, serve.
Every report file starts with a header record embedding the full run
configuration and the content hash of each checkpoint it used.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import content_hash, load_checkpoint, save_checkpoint
from .config import RunConfig
from .corpora import gen_knowledge_corpus, gen_open_domain_corpus
from .data import Vocab, load_corpus, save_corpus
from .training import STAGE1, STAGE2_EVAL, STAGE2_GEN, StageState, Trainer, write_loss_log


def _fail(message):
    print(f"error: {message}", file=sys.stderr)
    return 2


def main(argv=None):
    parser = argparse.ArgumentParser(prog="parlance", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="write a synthetic corpus")
    p.add_argument("--kind", choices=["open", "knowledge", "task"], required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--db-out", help="also write the fixture database (task kind)")

    p = sub.add_parser("train", help="run the curriculum on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=["open", "knowledge", "task"], required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--config", help="plain-text run config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, repeatable")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("--stage", choices=["all", "stage1", "stage2"], default="all")
    p.add_argument("--holdout", type=float, default=0.1)
    p.add_argument("--db", help="database file (task mode)")
    p.add_argument("--save-resume", action="store_true",
                   help="write per-epoch resume checkpoints with optimizer state")
    p.add_argument("--resume", help="resume checkpoint to continue from")

    p = sub.add_parser("chat", help="terminal REPL")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--mode", choices=["open", "knowledge", "task"], default="open")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--knowledge", nargs="*", default=None, help="facts for knowledge mode")

    p = sub.add_parser("score", help="emit per-candidate scores for a context")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--mode", choices=["open", "knowledge"], default="open")
    p.add_argument("--context", required=True, help="file: JSON sample record or one turn per line")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write records here instead of stdout")

    p = sub.add_parser("simulate", help="drive the task bot against scripted goals")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--goals", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)

    p = sub.add_parser("metrics", help="evaluate checkpoints on a corpus")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--mode", choices=["open", "knowledge"], default="open")
    p.add_argument("--corpus", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the HTTP chat service")
    p.add_argument("--artifacts", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8414)
    p.add_argument("--static", help="console bundle directory")

    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args) or 0
    except (ValueError, OSError, KeyError) as err:
        return _fail(err)


# ---------------------------------------------------------------------------


def cmd_gen_corpus(args):
    if args.kind == "open":
        samples = gen_open_domain_corpus(args.seed, args.n)
    elif args.kind == "knowledge":
        samples = gen_knowledge_corpus(args.seed, args.n)
    else:
        from .taskbot import default_database, gen_task_corpus

        db = default_database()
        samples = gen_task_corpus(args.seed, args.n, db)
        if args.db_out:
            db.save(args.db_out)
    save_corpus(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")


def _run_config(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed = {args.seed}")
    rc = RunConfig.load(args.config, overrides)
    rc.mode = args.mode
    return rc


def _ckpt_extra(rc, vocab, stage, state=None):
    from .data import SPECIALS

    extra = {
        "stage": stage,
        "vocab": vocab.id_to_token[len(SPECIALS):],
        "run_config": rc.to_dict(),
    }
    if state is not None:
        extra.update(epoch=state.epoch, step=state.step, adam_step=state.adam_step,
                     rng_state=state.rng_state)
    return extra


def cmd_train(args):
    rc = _run_config(args)
    samples = load_corpus(args.corpus)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    if args.mode == "task":
        from .taskbot import Database, task_training_samples

        if not args.db:
            raise ValueError("task mode requires --db")
        db = Database.load(args.db)
        train_samples = task_training_samples(samples)
    else:
        db = None
        train_samples = samples

    vocab = Vocab.from_samples(train_samples)
    n_hold = max(1, int(len(train_samples) * args.holdout)) if args.holdout > 0 else 0
    train, holdout = (train_samples[:-n_hold], train_samples[-n_hold:]) if n_hold else (train_samples, [])

    model_config = rc.model_config(len(vocab))
    train_config = rc.train_config()
    trainer = Trainer(model_config, train_config, vocab)

    def saver(stage):
        def on_epoch(params, state):
            if args.save_resume:
                save_checkpoint(
                    outdir / f"resume-{stage}.ckpt",
                    params,
                    extra=_ckpt_extra(rc, vocab, stage, state),
                    optimizer_arrays=state.optimizer_arrays,
                )
        return on_epoch

    resume_state = None
    resume_params = None
    resume_stage = None
    if args.resume:
        resume_params, extra, opt_arrays, _ = load_checkpoint(args.resume)
        resume_stage = extra["stage"]
        resume_state = StageState(
            stage=resume_stage,
            epoch=extra["epoch"],
            step=extra["step"],
            adam_step=extra["adam_step"],
            rng_state=extra["rng_state"],
            optimizer_arrays=opt_arrays,
        )

    stage1 = None
    if args.stage in ("all", "stage1"):
        kwargs = {}
        if resume_stage == STAGE1:
            kwargs = {"params": resume_params, "resume": resume_state}
        stage1 = trainer.train_stage1(train, holdout=holdout, on_epoch=saver(STAGE1), **kwargs)
        save_checkpoint(outdir / "stage1.ckpt", stage1, extra=_ckpt_extra(rc, vocab, STAGE1))
    elif (outdir / "stage1.ckpt").exists():
        stage1, _, _, _ = load_checkpoint(outdir / "stage1.ckpt")

    if args.stage in ("all", "stage2") and args.mode != "task":
        gen_kwargs = {}
        if resume_stage == STAGE2_GEN:
            gen_kwargs = {"params": resume_params, "resume": resume_state}
        generation = trainer.train_generation(train, stage1_params=stage1,
                                              on_epoch=saver(STAGE2_GEN), **gen_kwargs)
        save_checkpoint(outdir / "generation.ckpt", generation, extra=_ckpt_extra(rc, vocab, STAGE2_GEN))
        ev_kwargs = {}
        if resume_stage == STAGE2_EVAL:
            ev_kwargs = {"params": resume_params, "resume": resume_state}
        evaluation = trainer.train_evaluation(train, stage1_params=stage1,
                                              on_epoch=saver(STAGE2_EVAL), **ev_kwargs)
        save_checkpoint(outdir / "evaluation.ckpt", evaluation, extra=_ckpt_extra(rc, vocab, STAGE2_EVAL))

    if args.mode == "task" and db is not None:
        db.save(outdir / "db.jsonl")

    write_loss_log(trainer.records, outdir / "loss_log.jsonl")
    hashes = {
        p.name: content_hash(p) for p in sorted(outdir.glob("*.ckpt"))
    }
    report = {
        "v": 1,
        "kind": "train",
        "run_config": rc.to_dict(),
        "corpus": str(args.corpus),
        "n_train": len(train),
        "n_holdout": len(holdout),
        "checkpoints": hashes,
        "steps": len(trainer.records),
    }
    with open(outdir / "report.jsonl", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, sort_keys=True) + "\n")
    print(f"trained {args.mode} into {outdir} ({len(trainer.records)} steps)")


def _engine(args):
    from .chat import ChatEngine, load_bundles

    return ChatEngine(load_bundles(args.artifacts))


def cmd_chat(args):
    from .chat import repl

    engine = _engine(args)
    repl(engine, args.mode, seed=args.seed, knowledge=args.knowledge)


def _read_context_file(path):
    text = Path(path).read_text(encoding="utf-8").strip()
    try:
        rec = json.loads(text.splitlines()[0])
        return list(rec.get("context", [])), list(rec.get("knowledge", []))
    except json.JSONDecodeError:
        return [line.strip() for line in text.splitlines() if line.strip()], []


def cmd_score(args):
    from .chat import load_bundles
    from .data import DialogueSample
    from .decoding import generate_candidates, score_backward, score_coherence, score_forward

    bundles = load_bundles(args.artifacts)
    if args.mode not in bundles:
        raise ValueError(f"mode {args.mode!r} not present under {args.artifacts}")
    bundle = bundles[args.mode]
    context, knowledge = _read_context_file(args.context)
    sample = DialogueSample(context=context, response="x", knowledge=knowledge)
    dc = RunConfig(seed=args.seed).decode_config()
    candidates = generate_candidates(bundle.config, bundle.generation, bundle.vocab, sample, dc)
    score_coherence(bundle.config, bundle.evaluation, bundle.vocab, sample, candidates)
    scorer = bundle.stage1 or bundle.generation
    score_forward(bundle.config, scorer, bundle.vocab, sample, candidates)
    score_backward(bundle.config, scorer, bundle.vocab, sample, candidates)
    out = sys.stdout if not args.out else open(args.out, "w", encoding="utf-8")
    header = {"v": 1, "kind": "score", "checkpoints": bundle.checkpoint_hashes, "seed": args.seed}
    out.write(json.dumps(header, sort_keys=True) + "\n")
    for c in candidates:
        out.write(json.dumps({
            "z": c.latent_id, "text": c.text, "coherence": c.coherence,
            "forward": c.forward_score, "backward": c.backward_score,
        }, sort_keys=True) + "\n")
    if args.out:
        out.close()
        print(f"wrote {len(candidates)} candidate records to {args.out}")


def cmd_simulate(args):
    from .chat import load_bundles
    from .taskbot import NeuralBot, sample_goals, success_rate

    bundles = load_bundles(args.artifacts)
    if "task" not in bundles:
        raise ValueError("simulate requires a task bundle")
    bundle = bundles["task"]
    bot = NeuralBot(bundle.config, bundle.stage1, bundle.vocab, bundle.db)
    goals = sample_goals(bundle.db, np.random.default_rng(args.seed), args.goals)
    metrics, outcomes = success_rate(goals, bot, bundle.db, seed=args.seed)
    with open(args.report, "w", encoding="utf-8") as fh:
        header = {
            "v": 1,
            "kind": "simulate",
            "seed": args.seed,
            "checkpoints": bundle.checkpoint_hashes,
            **metrics,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, o in enumerate(outcomes):
            fh.write(json.dumps({
                "goal": i,
                "turns": len(o.turns),
                "success_without_grounding": o.success_without_grounding,
                "success_with_grounding": o.success_with_grounding,
                "phase2_turns": sum(1 for t in o.traces if t.phase2),
            }, sort_keys=True) + "\n")
    print(json.dumps(metrics, sort_keys=True))


def cmd_metrics(args):
    from .chat import load_bundles
    from .evaluation import coherence_accuracy, next_token_accuracy, posterior_cluster_mi

    bundles = load_bundles(args.artifacts)
    bundle = bundles[args.mode]
    samples = load_corpus(args.corpus)
    out = {"v": 1, "kind": "metrics", "mode": args.mode, "checkpoints": bundle.checkpoint_hashes}
    if bundle.stage1 is not None:
        out["next_token_accuracy"] = next_token_accuracy(
            bundle.config, bundle.stage1, bundle.vocab, samples, deterministic_only=True
        )
    if bundle.generation is not None and all(s.cluster_id is not None for s in samples):
        out["posterior_cluster_mi_bits"] = posterior_cluster_mi(
            bundle.config, bundle.generation, bundle.vocab, samples
        )
    if bundle.evaluation is not None:
        out["coherence_accuracy"] = coherence_accuracy(
            bundle.config, bundle.evaluation, bundle.vocab, samples,
            np.random.default_rng(args.seed),
        )
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(out, sort_keys=True) + "\n")
    print(json.dumps({k: v for k, v in out.items() if k not in ("v", "kind", "checkpoints")}, sort_keys=True))


def cmd_serve(args):
    from .server import serve

    serve(args.artifacts, host=args.host, port=args.port, static_dir=args.static)


_COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "chat": cmd_chat,
    "score": cmd_score,
    "simulate": cmd_simulate,
    "metrics": cmd_metrics,
    "serve": cmd_serve,
}


if __name__ == "__main__":
    sys.exit(main())
