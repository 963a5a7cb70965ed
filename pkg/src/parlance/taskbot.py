"""End-to-end task-oriented conversation engine.

The coarse one-to-one model is fine-tuned to emit, in one pass, a serialized
belief state, a system action, and a delexicalized response:

    <state> hotel area = north </state> <action> offer name </action> how about the <v-name> ?

The engine decodes that span (beam search), queries the database with the
state, refreshes the action against the results, and re-generates only the
response when the action changed or nothing matched (phase 2). Entity
mentions in user turns are wrapped in <name/>...</name> via fuzzy matching
before encoding. A scripted user simulator with known goals drives both
corpus generation and success-rate measurement.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    ACT_CLOSE,
    ACT_OPEN,
    NAME_CLOSE,
    NAME_OPEN,
    STATE_CLOSE,
    STATE_OPEN,
    DialogueSample,
)
from .decoding import DecodeConfig, beam_search
from .data import encode_context

CONSTRAINT_SLOTS = {
    "hotel": ("type", "area", "price"),
    "restaurant": ("food", "area", "price"),
}
REQUEST_SLOTS = ("phone", "address")
DISCRIMINATOR = {"hotel": "type", "restaurant": "food"}
PLACEHOLDERS = {"name": "<v-name>", "phone": "<v-phone>", "address": "<v-address>"}

_ARTICLES = {"the", "a", "an"}


class StateParseError(ValueError):
    pass


def normalize_entity(text):
    """Lowercase, unify hyphen/space, drop articles; used for name matching."""
    words = text.lower().replace("-", " ").split()
    return " ".join(w for w in words if w not in _ARTICLES)


# ---------------------------------------------------------------------------
# Belief state


@dataclass
class BeliefState:
    slots: dict = field(default_factory=dict)  # domain -> slot -> value

    def copy(self):
        return BeliefState({d: dict(sv) for d, sv in self.slots.items()})

    def set(self, domain, slot, value):
        self.slots.setdefault(domain, {})[slot] = value

    def domain(self):
        """The single active domain, or None when the state is empty."""
        if not self.slots:
            return None
        return sorted(self.slots)[0]

    def serialize(self):
        parts = []
        for domain in sorted(self.slots):
            for slot in sorted(self.slots[domain]):
                parts.append(f"{domain} {slot} = {self.slots[domain][slot]}")
        return " ; ".join(parts)

    @classmethod
    def parse(cls, text):
        state = cls()
        text = text.strip()
        if not text:
            return state
        for chunk in text.split(" ; "):
            chunk = chunk.strip()
            if not chunk:
                continue
            if " = " not in chunk:
                raise StateParseError(f"malformed state chunk {chunk!r}: missing '='")
            head, value = chunk.split(" = ", 1)
            value = value.strip()
            head_words = head.split()
            if len(head_words) != 2:
                raise StateParseError(f"malformed state chunk {chunk!r}: want 'domain slot = value'")
            domain, slot = head_words
            if domain not in CONSTRAINT_SLOTS:
                raise StateParseError(f"unknown domain {domain!r} in {chunk!r}")
            if slot != "name" and slot not in CONSTRAINT_SLOTS[domain]:
                raise StateParseError(f"unknown slot {slot!r} for domain {domain!r}")
            if not value:
                raise StateParseError(f"malformed state chunk {chunk!r}: empty value")
            state.set(domain, slot, value)
        return state


def serialize_state(state):
    return state.serialize()


def parse_state(text):
    return BeliefState.parse(text)


# ---------------------------------------------------------------------------
# System action


@dataclass
class SystemAction:
    act: str  # inform | request | clarify | offer | nooffer | bye
    args: list = field(default_factory=list)  # [(slot, value-or-None), ...]

    def __post_init__(self):
        if self.act == "clarify" and len(self.args) != 1:
            raise ValueError("clarify must carry exactly the ambiguous slot")

    def serialize(self):
        parts = [self.act]
        for slot, value in self.args:
            parts.append(slot if value is None else f"{slot} = {value}")
        return " ; ".join(parts) if len(self.args) and any(v is not None for _, v in self.args) else " ".join(parts)

    @classmethod
    def parse(cls, text):
        text = text.strip()
        if not text:
            raise ValueError("empty action span")
        if " ; " in text or " = " in text:
            chunks = text.split(" ; ")
            head = chunks[0].split()
            act = head[0]
            args = []
            first_rest = " ".join(head[1:])
            chunks = ([first_rest] if first_rest else []) + chunks[1:]
            for chunk in chunks:
                if " = " in chunk:
                    slot, value = chunk.split(" = ", 1)
                    args.append((slot.strip(), value.strip()))
                elif chunk.strip():
                    args.extend((w, None) for w in chunk.split())
            return cls(act, args)
        words = text.split()
        return cls(words[0], [(w, None) for w in words[1:]])


def serialize_action(action):
    return action.serialize()


def parse_action(text):
    return SystemAction.parse(text)


# ---------------------------------------------------------------------------
# Database


@dataclass(frozen=True)
class DbRecord:
    domain: str
    name: str
    attrs: dict

    def value(self, slot):
        if slot == "name":
            return self.name
        return self.attrs.get(slot)


class Database:
    def __init__(self, records):
        self.records = list(records)
        names = [(r.domain, normalize_entity(r.name)) for r in self.records]
        if len(set(names)) != len(names):
            raise ValueError("entity names must be unique per domain")

    def domains(self):
        return sorted({r.domain for r in self.records})

    def for_domain(self, domain):
        if domain not in CONSTRAINT_SLOTS:
            raise ValueError(f"unknown domain {domain!r}")
        return sorted((r for r in self.records if r.domain == domain), key=lambda r: r.name)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for r in sorted(self.records, key=lambda r: (r.domain, r.name)):
                fh.write(json.dumps({"domain": r.domain, "name": r.name, **r.attrs}, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    domain = rec.pop("domain")
                    name = rec.pop("name")
                    records.append(DbRecord(domain, name, rec))
        return cls(records)


def default_database():
    """Fixture database: 4 hotels, 4 guesthouses, 5 restaurants.

    Areas overlap across entity types so that an area-constrained but
    type-ambiguous request still matches more than two records, which is
    what makes clarification worthwhile.
    """
    rows = [
        ("hotel", "grand riverside hotel", {"type": "hotel", "area": "centre", "price": "expensive", "phone": "0122-446-1811", "address": "2-riverside-road"}),
        ("hotel", "station plaza hotel", {"type": "hotel", "area": "east", "price": "moderate", "phone": "0122-435-7622", "address": "19-station-road"}),
        ("hotel", "north star hotel", {"type": "hotel", "area": "north", "price": "cheap", "phone": "0122-431-0047", "address": "88-chesterton-lane"}),
        ("hotel", "king street hotel", {"type": "hotel", "area": "north", "price": "moderate", "phone": "0122-418-3552", "address": "5-king-street"}),
        ("hotel", "alpha-milton guest house", {"type": "guesthouse", "area": "north", "price": "cheap", "phone": "0122-331-1223", "address": "15-milton-road"}),
        ("hotel", "willow corner guest house", {"type": "guesthouse", "area": "south", "price": "moderate", "phone": "0122-344-9076", "address": "4-willow-lane"}),
        ("hotel", "harbor view guest house", {"type": "guesthouse", "area": "east", "price": "cheap", "phone": "0122-362-5190", "address": "31-harbor-street"}),
        ("hotel", "chesterton nook guest house", {"type": "guesthouse", "area": "north", "price": "moderate", "phone": "0122-357-4418", "address": "27-chesterton-lane"}),
        ("restaurant", "casa verde", {"food": "italian", "area": "centre", "price": "moderate", "phone": "0122-336-8340", "address": "7-market-street"}),
        ("restaurant", "spice garden", {"food": "indian", "area": "north", "price": "cheap", "phone": "0122-356-6993", "address": "106-mill-road"}),
        ("restaurant", "golden dragon", {"food": "chinese", "area": "south", "price": "expensive", "phone": "0122-324-8128", "address": "40-bridge-street"}),
        ("restaurant", "the oak table", {"food": "british", "area": "west", "price": "moderate", "phone": "0122-330-7512", "address": "12-castle-lane"}),
        ("restaurant", "mill road tandoori", {"food": "indian", "area": "north", "price": "expensive", "phone": "0122-359-0771", "address": "134-mill-road"}),
    ]
    return Database([DbRecord(d, n, a) for d, n, a in rows])


def fixture_database():
    """The shipped toy database (same content as default_database)."""
    from importlib import resources

    with resources.as_file(resources.files("parlance") / "fixtures" / "toy_db.jsonl") as p:
        return Database.load(p)


def db_query(db, state, domain=None):
    """Records of the domain matching every filled constraint slot exactly.

    Matching happens post-normalization for name values; unconstrained slots
    are ignored. An empty state returns the whole domain table.
    """
    domain = domain or state.domain()
    if domain is None:
        raise ValueError("query needs a domain, from the state or explicit")
    constraints = state.slots.get(domain, {})
    out = []
    for rec in db.for_domain(domain):
        ok = True
        for slot, want in constraints.items():
            have = rec.value(slot)
            if have is None:
                ok = False
                break
            if slot == "name":
                if normalize_entity(have) != normalize_entity(want):
                    ok = False
                    break
            elif have != want:
                ok = False
                break
        if ok:
            out.append(rec)
    return out


# ---------------------------------------------------------------------------
# Fuzzy entity annotation


def _levenshtein(a, b, cap):
    """Edit distance with early exit once the best possible exceeds cap."""
    if abs(len(a) - len(b)) > cap:
        return cap + 1
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        best = i
        for j, cb in enumerate(b, 1):
            cost = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
            cur.append(cost)
            best = min(best, cost)
        if best > cap:
            return cap + 1
        prev = cur
    return prev[-1]


def fuzzy_annotate(utterance, db, threshold=0.2):
    """Wrap spans matching DB entity names in <name/> ... </name>.

    A window of tokens matches when the normalized edit-distance ratio to a
    normalized entity name is <= threshold. Maximal non-overlapping spans
    win; candidates are ranked by ratio, then longer span, then position.
    """
    tokens = utterance.split()
    if not tokens:
        return utterance
    entities = [(normalize_entity(r.name), len(normalize_entity(r.name).split())) for r in db.records]
    candidates = []
    for ent_norm, ent_len in entities:
        cap = int(threshold * max(len(ent_norm), 1))
        for width in range(max(ent_len - 1, 1), ent_len + 2):
            for start in range(0, len(tokens) - width + 1):
                window = normalize_entity(" ".join(tokens[start : start + width]))
                if not window:
                    continue
                scale = max(len(window), len(ent_norm))
                if abs(len(window) - len(ent_norm)) > threshold * scale:
                    continue
                dist = _levenshtein(window, ent_norm, int(threshold * scale))
                ratio = dist / scale
                if ratio <= threshold:
                    candidates.append((ratio, -(width), start, start + width))
    chosen = []
    taken = set()
    for ratio, negw, start, end in sorted(candidates):
        if any(p in taken for p in range(start, end)):
            continue
        taken.update(range(start, end))
        chosen.append((start, end))
    if not chosen:
        return utterance
    out = []
    opens = {s for s, _ in chosen}
    closes = {e for _, e in chosen}
    for i, tok in enumerate(tokens):
        if i in opens:
            out.append(NAME_OPEN)
        out.append(tok)
        if i + 1 in closes:
            out.append(NAME_CLOSE)
    return " ".join(out)


# ---------------------------------------------------------------------------
# Deterministic policy pieces (shared by the oracle bot and action refresh)


def clarify_policy(state, records, domain=None):
    """Clarifying action when a discriminating slot would split the results.

    Fires when that slot is unfilled, the result set exceeds two records,
    and more than one value of the slot is present among them.
    """
    domain = domain or state.domain()
    if domain is None or not records:
        return None
    slot = DISCRIMINATOR[domain]
    if state.slots.get(domain, {}).get(slot):
        return None
    values = {r.value(slot) for r in records}
    if len(records) > 2 and len(values) > 1:
        return SystemAction("clarify", [(slot, None)])
    return None


def clarify_question(domain, slot, records):
    values = sorted({r.value(slot) for r in records})
    listed = " or ".join(values)
    if slot == "type":
        listed = " or ".join(f"a {v}" for v in values)
        return f"would you like {listed} ?"
    return f"would you like {listed} food ?"


def render_response(action, domain, records):
    """Delexicalized system utterance realizing the action."""
    act = action.act
    slots = [s for s, _ in action.args]
    if act == "offer":
        return f"how about the {PLACEHOLDERS['name']} ?"
    if act == "clarify":
        return clarify_question(domain, slots[0], records)
    if act == "inform":
        if "name" in slots and "phone" in slots:
            return f"the phone number of the {PLACEHOLDERS['name']} is {PLACEHOLDERS['phone']}"
        if "name" in slots and "address" in slots:
            return f"the address of the {PLACEHOLDERS['name']} is {PLACEHOLDERS['address']}"
        if "phone" in slots:
            return f"the phone number is {PLACEHOLDERS['phone']}"
        if "address" in slots:
            return f"the address is {PLACEHOLDERS['address']}"
    if act == "nooffer":
        return "i am sorry i could not find a match for that"
    if act == "bye":
        return "you are welcome goodbye"
    return "could you tell me more about what you need ?"


def lexicalize(text, record):
    """Fill value placeholders from a database record."""
    if record is None:
        return text
    for slot, ph in PLACEHOLDERS.items():
        value = record.value(slot)
        if value is not None:
            text = text.replace(ph, value)
    return text


def refresh_action(predicted, state, records, domain):
    """Deterministic action refresh against queried results."""
    if not records:
        if predicted is not None and predicted.act == "bye":
            return predicted
        return SystemAction("nooffer")
    if predicted is None or predicted.act in ("offer", "clarify"):
        clarify = clarify_policy(state, records, domain)
        if clarify is not None:
            return clarify
        return SystemAction("offer", [("name", None)])
    return predicted


# ---------------------------------------------------------------------------
# Phase-1 target assembly and parsing


def compose_target(state, action, response):
    return (
        f"{STATE_OPEN} {state.serialize()} {STATE_CLOSE} "
        f"{ACT_OPEN} {action.serialize()} {ACT_CLOSE} {response}"
    ).replace("  ", " ")


def split_target(text):
    """(state_span, action_span, response) from a phase-1 target string."""
    m = re.match(
        rf"^\s*{re.escape(STATE_OPEN)}\s*(.*?)\s*{re.escape(STATE_CLOSE)}\s*"
        rf"{re.escape(ACT_OPEN)}\s*(.*?)\s*{re.escape(ACT_CLOSE)}\s*(.*)$",
        text,
    )
    if not m:
        raise StateParseError(f"target does not follow the state/action/response layout: {text!r}")
    return m.group(1), m.group(2), m.group(3)


def task_training_samples(samples):
    """Fold state/action annotations into the response span for training."""
    out = []
    for s in samples:
        state = BeliefState.parse(s.belief_state or "")
        action = SystemAction.parse(s.system_action)
        out.append(replace(s, response=compose_target(state, action, s.response)))
    return out


# ---------------------------------------------------------------------------
# Two-phase turn over a trained generator


_MARKERS = (STATE_OPEN, STATE_CLOSE, ACT_OPEN, ACT_CLOSE)


def _usable_response(response, top_record):
    """Reject decoded responses with stray markers or unfillable placeholders."""
    if not response.strip():
        return False
    words = set(response.split())
    if words & set(_MARKERS):
        return False
    if top_record is None and words & set(PLACEHOLDERS.values()):
        return False
    return True


@dataclass
class TurnTrace:
    state_span: str
    predicted_action: str
    refreshed_action: str
    n_records: int
    phase2: bool
    state_fallback: bool = False
    phase1_response: str | None = None


def two_phase_turn(config, params, vocab, db, history, prev_state, decode_config=None, max_len=128, domain_hint=None):
    """One system turn: decode state/action/response, query, maybe re-decode.

    Returns (lexicalized response text, BeliefState, SystemAction, TurnTrace).
    Phase 2 re-generates only the response, conditioned on the refreshed
    action, exactly when the action changed or the query came back empty.
    """
    decode_config = decode_config or DecodeConfig(strategy="beam")
    annotated = [fuzzy_annotate(turn, db) for turn in history]
    sample = DialogueSample(context=annotated, response="x")
    prefix = encode_context(sample, vocab, max_len=max_len, reserve=decode_config.max_new_tokens + 1)

    tokens, _, _ = beam_search(config, params, vocab, prefix, decode_config)
    decoded = vocab.decode(tokens)
    fallback = False
    try:
        state_span, act_span, response = split_target(decoded)
        state = BeliefState.parse(state_span)
    except (StateParseError, ValueError):
        state = prev_state.copy() if prev_state is not None else BeliefState()
        fallback = True
        act_span, response = "", ""
    try:
        predicted = SystemAction.parse(act_span) if act_span.strip() else None
    except ValueError:
        predicted = None

    domain = state.domain() or domain_hint
    if domain is not None:
        records = db_query(db, state, domain)
    else:
        records = []
    refreshed = refresh_action(predicted, state, records, domain) if domain else predicted
    pred_span = predicted.serialize() if predicted else ""
    refr_span = refreshed.serialize() if refreshed else ""
    phase2 = (refr_span != pred_span) or not records

    if phase2 and refreshed is not None:
        forced_text = f"{STATE_OPEN} {state.serialize()} {STATE_CLOSE} {ACT_OPEN} {refr_span} {ACT_CLOSE}"
        forced = vocab.encode(" ".join(forced_text.split()))
        tokens2, _, _ = beam_search(config, params, vocab, prefix, decode_config, forced_tokens=forced)
        decoded2 = vocab.decode(tokens2)
        try:
            _, _, response = split_target(decoded2)
        except StateParseError:
            response = render_response(refreshed, domain, records)
    elif fallback and refreshed is not None:
        response = render_response(refreshed, domain, records)

    top = records[0] if records else None
    final_action = refreshed if refreshed is not None else SystemAction("nooffer")
    if not _usable_response(response, top):
        response = render_response(final_action, domain, records)
    text = lexicalize(response, top).strip()
    if not text:
        text = lexicalize(render_response(final_action, domain, records), top)
    trace = TurnTrace(
        state_span=state.serialize(),
        predicted_action=pred_span,
        refreshed_action=refr_span,
        n_records=len(records),
        phase2=bool(phase2),
        state_fallback=fallback,
        phase1_response=response,
    )
    return text, state, final_action, trace


# ---------------------------------------------------------------------------
# Goals, scripted user simulator, oracle bot, corpus generation


@dataclass
class Goal:
    domain: str
    constraints: dict
    requests: list
    ambiguous: bool = False  # hold back the discriminating slot at first
    name_seek: bool = False  # asks for a named entity directly
    satisfiable: bool = True
    surface_seed: int = 0


def perturb_name(name, rng):
    """Surface variants covering case, hyphen/space, and article changes."""
    variants = [
        name,
        name.replace("-", " "),
        "the " + name,
        name.capitalize(),
        ("the " + name.replace("-", " ")),
    ]
    return variants[rng.integers(len(variants))]


def sample_goals(db, rng, n, satisfiable=True, ambiguous_rate=0.35, name_seek_rate=0.25):
    goals = []
    domains = db.domains()
    request_menu = (["phone"], ["address"], ["phone", "address"])
    for i in range(n):
        domain = domains[rng.integers(len(domains))]
        table = db.for_domain(domain)
        target = table[rng.integers(len(table))]
        requests = list(request_menu[rng.integers(len(request_menu))])
        if not satisfiable:
            # Constraint pair absent from the fixture table.
            state = BeliefState()
            combos = [
                {"area": a, "price": p}
                for a in ("north", "south", "east", "west", "centre")
                for p in ("cheap", "moderate", "expensive")
            ]
            rng.shuffle(combos)
            chosen = None
            for combo in combos:
                probe = BeliefState({domain: dict(combo)})
                if not db_query(db, probe, domain):
                    chosen = combo
                    break
            goals.append(
                Goal(domain, chosen or {"area": "west", "price": "cheap"}, requests, satisfiable=False,
                     surface_seed=int(rng.integers(2**31)))
            )
            continue
        if rng.random() < name_seek_rate:
            goals.append(
                Goal(domain, {"name": target.name}, requests[:1], name_seek=True,
                     surface_seed=int(rng.integers(2**31)))
            )
            continue
        disc = DISCRIMINATOR[domain]
        constraints = {disc: target.value(disc)}
        ambiguous = rng.random() < ambiguous_rate
        # Ambiguous goals stay loosely constrained so the result set is wide
        # enough to warrant a clarifying question.
        extra_rate = 0.3 if ambiguous else 0.7
        for slot in CONSTRAINT_SLOTS[domain]:
            if slot != disc and rng.random() < extra_rate:
                constraints[slot] = target.value(slot)
        goals.append(
            Goal(domain, constraints, requests, ambiguous=ambiguous,
                 surface_seed=int(rng.integers(2**31)))
        )
    return goals


_OPENER_HOTEL = {
    None: "i need a place to stay",
    "hotel": "i am looking for a hotel",
    "guesthouse": "i am looking for a guesthouse",
}


def _opener(goal, rng, db):
    if goal.name_seek:
        slot = goal.requests[0]
        mention = perturb_name(goal.constraints["name"], rng)
        noun = "phone number" if slot == "phone" else "address"
        return f"what is the {noun} of the {mention} ?"
    parts = []
    if goal.domain == "hotel":
        t = goal.constraints.get("type")
        parts.append(_OPENER_HOTEL[None if goal.ambiguous or not t else t])
    else:
        food = goal.constraints.get("food")
        if goal.ambiguous or not food:
            parts.append("i am looking for a restaurant")
        else:
            parts.append(f"i am looking for a {food} restaurant")
    if "area" in goal.constraints:
        parts.append(f"in the {goal.constraints['area']}")
    if "price" in goal.constraints:
        parts.append(f"with {goal.constraints['price']} prices")
    return " ".join(parts)


PHONE_RE = re.compile(r"^[0-9][0-9-]{4,}$")
ADDRESS_RE = re.compile(r"^[0-9]+(-[a-z]+)+$")


def extract_value(slot, text):
    """Pull a phone/address-shaped token out of a system utterance."""
    for tok in text.split():
        if slot == "phone" and PHONE_RE.match(tok):
            return tok
        if slot == "address" and ADDRESS_RE.match(tok):
            return tok
    return None


def find_mentioned_entity(text, db, domain=None):
    """Best fuzzy entity match inside a system utterance, if any."""
    spans = fuzzy_annotate(text, db)
    if NAME_OPEN not in spans:
        return None
    inner = spans.split(NAME_OPEN, 1)[1].split(NAME_CLOSE, 1)[0].strip()
    norm = normalize_entity(inner)
    for rec in db.records:
        if domain is not None and rec.domain != domain:
            continue
        if normalize_entity(rec.name) == norm:
            return rec
    return None


@dataclass
class DialogueOutcome:
    goal: Goal
    turns: list
    success_without_grounding: bool
    success_with_grounding: bool
    offered: str | None
    informed: dict
    turn_limit_hit: bool = False
    traces: list = field(default_factory=list)


def simulate(goal, bot, db, seed=0, max_turns=20):
    """Drive one dialogue between the scripted user and a bot callable.

    `bot(history, prev_state) -> (text, state, action, trace)`. The user
    states constraints, answers clarifying questions from its goal, requests
    its slots one by one, and closes. Success without grounding means every
    requested slot received a value-shaped answer; grounding additionally
    checks every informed value (and the offered entity) against the
    database and the goal constraints.
    """
    rng = np.random.default_rng([seed, goal.surface_seed])
    history = []
    traces = []
    state = None
    informed = {}
    offered = None
    pending = list(goal.requests)
    asked = None
    ended = False
    turn_limit_hit = False
    # The opener holds back the discriminating slot for ambiguous goals; the
    # user reveals it later, answering a clarifying question or amending an
    # offer that may not match.
    disc = DISCRIMINATOR[goal.domain]
    unrevealed = {}
    if goal.ambiguous and disc in goal.constraints:
        unrevealed[disc] = goal.constraints[disc]

    history.append(_opener(goal, rng, db))
    if goal.name_seek:
        asked = goal.requests[0]
    for _ in range(max_turns):
        reply, state, action, trace = bot(list(history), state)
        history.append(reply)
        traces.append(trace)

        if asked is not None:
            value = extract_value(asked, reply)
            if value is not None:
                informed[asked] = value
                if asked in pending:
                    pending.remove(asked)
                asked = None
        mention = find_mentioned_entity(reply, db, goal.domain)
        if mention is not None:
            offered = mention.name

        if action is not None and action.act == "bye":
            ended = True
            break
        if action is not None and action.act == "clarify":
            slot = action.args[0][0]
            want = goal.constraints.get(slot)
            if want is None:
                table = db.for_domain(goal.domain)
                want = sorted({r.value(slot) for r in table})[0]
            unrevealed.pop(slot, None)
            if slot == "type":
                history.append(f"a {want} please")
            else:
                history.append(f"{want} food please")
            continue
        if action is not None and action.act == "nooffer":
            history.append("okay thank you anyway goodbye")
            continue
        if unrevealed:
            slot = sorted(unrevealed)[0]
            want = unrevealed.pop(slot)
            if slot == "type":
                history.append(f"i would prefer a {want}")
            elif slot == "food":
                history.append(f"i would prefer {want} food")
            else:
                history.append(f"i would prefer {want} {slot}")
            continue
        if pending:
            asked = pending[0]
            noun = "phone number" if asked == "phone" else "address"
            history.append(f"what is the {noun} ?")
            continue
        history.append("thank you goodbye")
    else:
        turn_limit_hit = True

    success_wo = not turn_limit_hit and not pending and all(s in informed for s in goal.requests)
    if not goal.satisfiable:
        success_wo = False

    success_with = False
    if success_wo:
        record = None
        if goal.name_seek:
            probe = BeliefState({goal.domain: {"name": goal.constraints["name"]}})
            hits = db_query(db, probe, goal.domain)
            record = hits[0] if hits else None
        elif offered is not None:
            probe = BeliefState({goal.domain: {"name": offered}})
            hits = db_query(db, probe, goal.domain)
            record = hits[0] if hits else None
        if record is not None:
            ok = all(record.value(s) == v for s, v in informed.items())
            for slot, want in goal.constraints.items():
                if slot == "name":
                    ok = ok and normalize_entity(record.name) == normalize_entity(want)
                else:
                    ok = ok and record.value(slot) == want
            success_with = ok

    return DialogueOutcome(
        goal=goal,
        turns=list(history),
        success_without_grounding=success_wo,
        success_with_grounding=success_with,
        offered=offered,
        informed=informed,
        turn_limit_hit=turn_limit_hit,
        traces=traces,
    )


def success_rate(goals, bot, db, seed=0):
    """Aggregate §-style metrics: both success rates and their average."""
    outcomes = [simulate(g, bot, db, seed=seed + i) for i, g in enumerate(goals)]
    wo = sum(o.success_without_grounding for o in outcomes) / max(len(outcomes), 1)
    with_g = sum(o.success_with_grounding for o in outcomes) / max(len(outcomes), 1)
    return {
        "n": len(outcomes),
        "success_without_grounding": wo,
        "success_with_grounding": with_g,
        "average_success": (wo + with_g) / 2.0,
    }, outcomes


# ---------------------------------------------------------------------------
# Oracle bot (rule-based, DB-perfect) and corpus generation


class OracleBot:
    """Scripted system policy used for corpus generation and as a test oracle."""

    def __init__(self, db, record_samples=None):
        self.db = db
        self.record_samples = record_samples

    def __call__(self, history, prev_state):
        state = prev_state.copy() if prev_state is not None else BeliefState()
        domain = self._read_user(history, state)
        records = db_query(self.db, state, domain) if domain else []
        user_turn = history[-1]
        wants = self._requested_slot(user_turn)
        if "goodbye" in user_turn or "thank you" in user_turn:
            action = SystemAction("bye")
        elif not records:
            action = SystemAction("nooffer")
        elif wants is not None:
            if self._name_in(user_turn):
                action = SystemAction("inform", [("name", None), (wants, None)])
            else:
                action = SystemAction("inform", [(wants, None)])
        else:
            action = refresh_action(SystemAction("offer", [("name", None)]), state, records, domain)
        response = render_response(action, domain, records)
        top = records[0] if records else None
        text = lexicalize(response, top)
        trace = TurnTrace(
            state_span=state.serialize(),
            predicted_action=action.serialize(),
            refreshed_action=action.serialize(),
            n_records=len(records),
            phase2=not records,
        )
        if self.record_samples is not None:
            annotated = [fuzzy_annotate(t, self.db) for t in history]
            self.record_samples.append(
                DialogueSample(
                    context=annotated,
                    response=response,
                    belief_state=state.serialize(),
                    system_action=action.serialize(),
                )
            )
        return text, state, action, trace

    def _requested_slot(self, turn):
        if "phone" in turn:
            return "phone"
        if "address" in turn:
            return "address"
        return None

    def _name_in(self, turn):
        return find_mentioned_entity(turn, self.db) is not None

    def _read_user(self, history, state):
        """Update the state from every user turn seen so far (scripted NLU)."""
        domain = state.domain()
        for i in range(0, len(history), 2):
            turn = history[i]
            words = turn.split()
            ent = find_mentioned_entity(turn, self.db)
            if ent is not None:
                domain = ent.domain
            elif "restaurant" in words:
                domain = "restaurant"
            elif "hotel" in words or "guesthouse" in words or "stay" in words:
                domain = "hotel"
            if domain is None:
                continue
            if ent is not None:
                # Track the name as the user said it; the DB query normalizes,
                # and a surface copy is what the generator can learn to emit.
                span = fuzzy_annotate(turn, self.db)
                surface = span.split(NAME_OPEN, 1)[1].split(NAME_CLOSE, 1)[0].strip()
                state.set(domain, "name", surface)
            if domain == "hotel":
                if "hotel" in words:
                    state.set(domain, "type", "hotel")
                if "guesthouse" in words:
                    state.set(domain, "type", "guesthouse")
            else:
                for food in ("italian", "indian", "chinese", "british"):
                    if food in words:
                        state.set(domain, "food", food)
            for area in ("north", "south", "east", "west", "centre"):
                if area in words:
                    state.set(domain, "area", area)
            for price in ("cheap", "moderate", "expensive"):
                if price in words:
                    state.set(domain, "price", price)
        return domain


def gen_task_corpus(seed, n, db):
    """n scripted dialogues over the fixture DB, annotated per system turn."""
    rng = np.random.default_rng(seed)
    n_unsat = max(1, int(0.1 * n))
    goals = sample_goals(db, rng, n - n_unsat) + sample_goals(db, rng, n_unsat, satisfiable=False)
    samples = []
    bot = OracleBot(db, record_samples=samples)
    for i, goal in enumerate(goals):
        simulate(goal, bot, db, seed=seed + i)
    return samples


class NeuralBot:
    """Bot callable backed by a trained phase-1 generator."""

    def __init__(self, config, params, vocab, db, decode_config=None, max_len=128, domain_hint=None):
        self.config = config
        self.params = params
        self.vocab = vocab
        self.db = db
        self.decode_config = decode_config or DecodeConfig(strategy="beam", max_new_tokens=48)
        self.max_len = max_len
        self.domain_hint = domain_hint

    def __call__(self, history, prev_state):
        return two_phase_turn(
            self.config,
            self.params,
            self.vocab,
            self.db,
            history,
            prev_state,
            self.decode_config,
            self.max_len,
            self.domain_hint,
        )
