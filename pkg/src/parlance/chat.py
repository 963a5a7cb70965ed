"""Session handling and the reply pipeline shared by the REPL and the server.

A ModelBundle holds everything inference needs for one conversation mode.
ChatEngine.respond is the single reply path, so terminal and HTTP clients
produce token-identical replies for identical inputs and seeds.
"""

from __future__ import annotations

import itertools
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import load_checkpoint
from .data import DialogueSample, Vocab
from .decoding import (
    DecodeConfig,
    generate_candidates,
    score_backward,
    score_coherence,
    score_forward,
    select,
)
from .taskbot import Database, NeuralBot, BeliefState

MODES = ("open", "knowledge", "task")


@dataclass
class ModelBundle:
    """Loaded artifacts for one mode."""

    mode: str
    config: object
    vocab: Vocab
    generation: object = None  # stage-2 generation Parameters
    evaluation: object = None  # stage-2 evaluation Parameters
    stage1: object = None      # coarse model (forward/backward scorer; task model)
    db: Database = None
    checkpoint_hashes: dict = field(default_factory=dict)

    @classmethod
    def load(cls, mode, directory):
        """Read a mode directory: stage1/gen/eval checkpoints (+ db for task)."""
        from .checkpoint import content_hash
        from .model import ModelConfig

        directory = Path(directory)
        paths = {
            "stage1": directory / "stage1.ckpt",
            "generation": directory / "generation.ckpt",
            "evaluation": directory / "evaluation.ckpt",
        }
        loaded = {}
        hashes = {}
        vocab = None
        config = None
        for key, p in paths.items():
            if p.exists():
                params, extra, _, _ = load_checkpoint(p)
                loaded[key] = params
                hashes[key] = content_hash(p)
                vocab = Vocab(extra["vocab"])
                config = params.config
        if not loaded:
            raise FileNotFoundError(f"no checkpoints found under {directory}")
        db = None
        db_path = directory / "db.jsonl"
        if db_path.exists():
            db = Database.load(db_path)
        return cls(
            mode=mode,
            config=config,
            vocab=vocab,
            generation=loaded.get("generation"),
            evaluation=loaded.get("evaluation"),
            stage1=loaded.get("stage1"),
            db=db,
            checkpoint_hashes=hashes,
        )


def load_bundles(artifacts_dir):
    """Every mode subdirectory present under the artifacts directory."""
    artifacts_dir = Path(artifacts_dir)
    bundles = {}
    for mode in MODES:
        sub = artifacts_dir / mode
        if sub.is_dir():
            bundles[mode] = ModelBundle.load(mode, sub)
    if not bundles:
        raise FileNotFoundError(f"no mode directories under {artifacts_dir}")
    return bundles


@dataclass
class ChatSession:
    session_id: str
    mode: str
    seed: int = 0
    history: list = field(default_factory=list)  # (speaker, text), append-only
    knowledge: list = field(default_factory=list)
    goal: dict | None = None
    state: object = None  # task-mode belief state
    turn_index: int = 0
    created_at: float = field(default_factory=time.time)
    last_used: float = field(default_factory=time.time)

    def transcript(self):
        return [{"speaker": s, "text": t} for s, t in self.history]


class SessionStore:
    """In-memory session map with TTL eviction on access."""

    def __init__(self, ttl_seconds=3600.0):
        self.ttl = ttl_seconds
        self._sessions = {}

    def create(self, mode, seed=0, knowledge=None, goal=None):
        session = ChatSession(
            session_id=uuid.uuid4().hex[:16],
            mode=mode,
            seed=seed,
            knowledge=list(knowledge or []),
            goal=goal,
        )
        self._sessions[session.session_id] = session
        return session

    def get(self, session_id):
        self.evict_stale()
        session = self._sessions.get(session_id)
        if session is None:
            raise KeyError(session_id)
        session.last_used = time.time()
        return session

    def close(self, session_id):
        if session_id not in self._sessions:
            raise KeyError(session_id)
        del self._sessions[session_id]

    def evict_stale(self):
        now = time.time()
        dead = [k for k, s in self._sessions.items() if now - s.last_used > self.ttl]
        for k in dead:
            del self._sessions[k]


class ChatEngine:
    """Reply pipeline over loaded bundles; one instance serves many sessions."""

    def __init__(self, bundles, decode_config=None, max_len=128):
        self.bundles = bundles
        self.decode_config = decode_config
        self.max_len = max_len

    def modes(self):
        return sorted(self.bundles)

    def _decode_config(self, mode, seed):
        if self.decode_config is not None:
            base = self.decode_config
        elif mode == "task":
            base = DecodeConfig(strategy="beam", max_new_tokens=48)
        else:
            base = DecodeConfig(strategy="top_k")
        from dataclasses import replace

        return replace(base, seed=seed)

    def respond(self, session, text):
        """Append the user turn, produce the bot turn plus a debug payload."""
        if session.mode not in self.bundles:
            raise ValueError(f"mode {session.mode!r} is not served")
        session.history.append(("user", text))
        turn_seed = (session.seed * 100003 + session.turn_index) % (2**31)
        if session.mode == "task":
            reply, payload = self._respond_task(session, turn_seed)
        else:
            reply, payload = self._respond_selecting(session, turn_seed)
        session.history.append(("bot", reply))
        session.turn_index += 1
        return reply, payload

    def _respond_selecting(self, session, turn_seed):
        bundle = self.bundles[session.mode]
        if bundle.generation is None or bundle.evaluation is None:
            raise ValueError(f"mode {session.mode!r} needs generation and evaluation checkpoints")
        context = [t for _, t in session.history]
        knowledge = session.knowledge if session.mode == "knowledge" else []
        sample = DialogueSample(context=context, response="x", knowledge=knowledge)
        dc = self._decode_config(session.mode, turn_seed)
        candidates = generate_candidates(
            bundle.config, bundle.generation, bundle.vocab, sample, dc, self.max_len
        )
        score_coherence(bundle.config, bundle.evaluation, bundle.vocab, sample, candidates, self.max_len)
        scorer = bundle.stage1 if bundle.stage1 is not None else bundle.generation
        score_forward(bundle.config, scorer, bundle.vocab, sample, candidates, self.max_len)
        score_backward(bundle.config, scorer, bundle.vocab, sample, candidates, self.max_len)
        winner = select(candidates)
        payload = {
            "candidates": [
                {
                    "z": c.latent_id,
                    "text": c.text,
                    "coherence": c.coherence,
                    "forward": c.forward_score,
                    "backward": c.backward_score,
                    "selected": c is winner,
                }
                for c in candidates
            ]
        }
        return winner.text, payload

    def _respond_task(self, session, turn_seed):
        bundle = self.bundles["task"]
        if bundle.stage1 is None or bundle.db is None:
            raise ValueError("task mode needs a stage1 checkpoint and a database")
        bot = NeuralBot(
            bundle.config,
            bundle.stage1,
            bundle.vocab,
            bundle.db,
            self._decode_config("task", turn_seed),
            self.max_len,
        )
        user_turns = [t for sp, t in session.history if sp == "user"]
        bot_turns = [t for sp, t in session.history if sp == "bot"]
        history = list(itertools.chain.from_iterable(
            (u, b) for u, b in itertools.zip_longest(user_turns, bot_turns) if u is not None
        ))
        history = [t for t in history if t is not None]
        reply, state, action, trace = bot(history, session.state)
        session.state = state
        payload = {
            "trace": {
                "state": trace.state_span,
                "predicted_action": trace.predicted_action,
                "refreshed_action": trace.refreshed_action,
                "db_results": trace.n_records,
                "phase2": trace.phase2,
                "state_fallback": trace.state_fallback,
            }
        }
        return reply, payload


def repl(engine, mode, seed=0, knowledge=None, stdin=None, stdout=None):
    """Line-oriented terminal chat; type an empty line or 'exit' to stop."""
    import sys

    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    store = SessionStore()
    session = store.create(mode, seed=seed, knowledge=knowledge)
    stdout.write(f"[{mode} mode; session {session.session_id}; empty line exits]\n")
    stdout.flush()
    for line in stdin:
        text = line.strip()
        if not text or text == "exit":
            break
        reply, _ = engine.respond(session, text)
        stdout.write(f"bot> {reply}\n")
        stdout.flush()
    return session
