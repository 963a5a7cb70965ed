"""Synthetic corpus generators with known structure.

Both grammars are closed: every context template enumerates its valid
responses, so tests can score generated text exactly. The open-domain grammar
realizes a one-to-many mapping (four response clusters per context); the
knowledge grammar attaches three facts per sample and draws slot values fresh
each time, so the correct value is unguessable without reading the facts.
"""

from __future__ import annotations

import numpy as np

from .data import DialogueSample

TOPICS = [
    "jazz",
    "hiking",
    "sushi",
    "chess",
    "photography",
    "gardening",
    "baseball",
    "painting",
    "astronomy",
    "cooking",
    "cycling",
    "poetry",
    "coffee",
    "surfing",
    "museums",
    "robotics",
]

CONTEXT_FRAMES = [
    ("do you enjoy {t} ?",),
    ("i spent the whole weekend on {t}", "oh was it fun ?"),
    ("my friend keeps talking about {t}",),
    ("we could try {t} together sometime", "hmm tell me more"),
]

# Cluster surface forms: the first response word reveals the cluster, and the
# continuation is deterministic given (context, cluster). Every cluster names
# the topic, so a response sampled from another context is incoherent here.
RESPONSE_CLUSTERS = [
    "yes i love {t} it is wonderful",
    "no i find {t} rather boring",
    "what do you like most about {t} ?",
    "honestly i would rather not discuss {t} today",
]

N_CLUSTERS = len(RESPONSE_CLUSTERS)


class OpenDomainGrammar:
    """One-to-many toy grammar: each context admits exactly four responses."""

    def context_templates(self):
        out = []
        for frame in CONTEXT_FRAMES:
            for topic in TOPICS:
                out.append(tuple(turn.format(t=topic) for turn in frame))
        return out

    def topic_of(self, context):
        for topic in TOPICS:
            if f" {topic} " in f" {context[0]} ":
                return topic
        raise ValueError(f"context does not mention a known topic: {context!r}")

    def valid_responses(self, context):
        topic = self.topic_of(context)
        return [c.format(t=topic) for c in RESPONSE_CLUSTERS]

    def cluster_of(self, context, response):
        """Cluster index of `response` for this context, or None if invalid."""
        try:
            candidates = self.valid_responses(context)
        except ValueError:
            return None
        for i, c in enumerate(candidates):
            if response == c:
                return i
        return None


def gen_open_domain_corpus(seed, n):
    """n samples drawn uniformly over (frame, topic) x cluster."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    grammar = OpenDomainGrammar()
    templates = grammar.context_templates()
    samples = []
    for _ in range(n):
        context = list(templates[rng.integers(len(templates))])
        cluster = int(rng.integers(N_CLUSTERS))
        topic = grammar.topic_of(context)
        samples.append(
            DialogueSample(
                context=context,
                response=RESPONSE_CLUSTERS[cluster].format(t=topic),
                cluster_id=cluster,
            )
        )
    return samples


# ---------------------------------------------------------------------------
# Knowledge-grounded grammar

ENTITY_ADJECTIVES = ["corner", "harbor", "grand", "little", "old", "garden"]
ENTITY_NOUNS = ["cafe", "museum", "library", "cinema", "market", "bakery"]

KNOWLEDGE_ATTRIBUTES = ["area", "price", "year"]

ATTRIBUTE_VALUES = {
    "area": ["north", "south", "east", "west", "centre", "riverside"],
    "price": ["cheap", "moderate", "expensive", "premium", "budget", "lavish"],
    "year": ["1890", "1905", "1923", "1948", "1967", "1982"],
}

FACT_TEMPLATES = {
    "area": "the {e} is in the {v} part of town",
    "price": "the {e} has {v} prices",
    "year": "the {e} opened in {v}",
}

KNOWLEDGE_RESPONSES = {
    "area": "it is in the {v} part of town",
    "price": "it has {v} prices",
    "year": "it opened in {v}",
}

KNOWLEDGE_CONTEXT_FRAMES = [
    ("tell me about the {e}",),
    ("i am curious about the {e}", "what would you like to know ?"),
    ("have you visited the {e} ?",),
]


class KnowledgeGrammar:
    """Three facts per sample; the response copies one fact's slot value."""

    def entities(self):
        return [f"{a} {n}" for a in ENTITY_ADJECTIVES for n in ENTITY_NOUNS]

    def attribute_of(self, response):
        """Which attribute template the response realizes, or None."""
        for attr, tpl in KNOWLEDGE_RESPONSES.items():
            head = tpl.split("{v}")[0]
            tail = tpl.split("{v}")[1]
            if response.startswith(head) and response.endswith(tail):
                return attr
        return None

    def value_of(self, response):
        """(attribute, value) realized by the response, or None if invalid."""
        attr = self.attribute_of(response)
        if attr is None:
            return None
        tpl = KNOWLEDGE_RESPONSES[attr]
        head, tail = tpl.split("{v}")
        value = response[len(head) : len(response) - len(tail) if tail else None]
        if value in ATTRIBUTE_VALUES[attr]:
            return attr, value
        return None

    def fact_values(self, sample):
        """attribute -> value map recovered from a sample's fact list."""
        out = {}
        for fact in sample.knowledge:
            for attr in KNOWLEDGE_ATTRIBUTES:
                head, tail = FACT_TEMPLATES[attr].split("{v}")
                # the entity name is embedded in the head; match loosely
                marker = head.split("{e}")[1]
                if marker in fact and (not tail or fact.endswith(tail)):
                    idx = fact.index(marker) + len(marker)
                    value = fact[idx : len(fact) - len(tail) if tail else None]
                    if value in ATTRIBUTE_VALUES[attr]:
                        out[attr] = value
        return out

    def valid_responses(self, sample):
        values = self.fact_values(sample)
        return [KNOWLEDGE_RESPONSES[a].format(v=v) for a, v in sorted(values.items())]

    def is_grounded(self, sample, response):
        """True iff the response's slot value matches the attached fact."""
        got = self.value_of(response)
        if got is None:
            return False
        attr, value = got
        return self.fact_values(sample).get(attr) == value


def gen_knowledge_corpus(seed, n):
    """n grounded samples, slot values drawn fresh per sample."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    grammar = KnowledgeGrammar()
    entities = grammar.entities()
    samples = []
    for _ in range(n):
        entity = entities[rng.integers(len(entities))]
        frame = KNOWLEDGE_CONTEXT_FRAMES[rng.integers(len(KNOWLEDGE_CONTEXT_FRAMES))]
        values = {
            attr: ATTRIBUTE_VALUES[attr][rng.integers(len(ATTRIBUTE_VALUES[attr]))]
            for attr in KNOWLEDGE_ATTRIBUTES
        }
        facts = [FACT_TEMPLATES[a].format(e=entity, v=values[a]) for a in KNOWLEDGE_ATTRIBUTES]
        target_attr = KNOWLEDGE_ATTRIBUTES[rng.integers(len(KNOWLEDGE_ATTRIBUTES))]
        samples.append(
            DialogueSample(
                context=[turn.format(e=entity) for turn in frame],
                response=KNOWLEDGE_RESPONSES[target_attr].format(v=values[target_attr]),
                knowledge=facts,
            )
        )
    return samples
