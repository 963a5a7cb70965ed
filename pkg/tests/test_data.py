import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from parlance.corpora import (
    ATTRIBUTE_VALUES,
    KNOWLEDGE_ATTRIBUTES,
    KnowledgeGrammar,
    N_CLUSTERS,
    OpenDomainGrammar,
    gen_knowledge_corpus,
    gen_open_domain_corpus,
)
from parlance.data import (
    DEFAULT_SCHEME,
    DialogueSample,
    SPECIALS,
    Vocab,
    encode_context,
    encode_joint,
    encode_sample,
    load_corpus,
    mlm_mask,
    save_corpus,
)


@pytest.fixture(scope="module")
def vocab():
    return Vocab.from_samples(gen_open_domain_corpus(0, 500))


# ---------------------------------------------------------------------------
# Vocab / tokenizer


def test_round_trip(vocab):
    assert vocab.decode(vocab.encode("i love jazz")) == "i love jazz"


def test_empty_text(vocab):
    assert vocab.encode("") == []


def test_unknown_word_maps_to_unk(vocab):
    ids = vocab.encode("xylophone")
    assert ids == [vocab.unk_id]
    assert vocab.decode(ids) == "<unk>"


def test_specials_occupy_lowest_ids(vocab):
    for i, tok in enumerate(SPECIALS):
        assert vocab.token_to_id[tok] == i


def test_vocab_bijection(vocab):
    assert len(vocab.token_to_id) == len(vocab.id_to_token)
    for tok, i in vocab.token_to_id.items():
        assert vocab.id_to_token[i] == tok


# ---------------------------------------------------------------------------
# Corpus records


def test_corpus_file_round_trip(tmp_path):
    samples = gen_open_domain_corpus(3, 50) + gen_knowledge_corpus(4, 50)
    path = tmp_path / "corpus.jsonl"
    save_corpus(samples, path)
    loaded = load_corpus(path)
    assert loaded == samples


def test_sample_record_round_trip():
    s = DialogueSample(
        context=["hello there"],
        response="hi",
        knowledge=["a fact"],
        belief_state="hotel area = north",
        system_action="offer name",
        cluster_id=2,
    )
    assert DialogueSample.from_record(s.to_record()) == s


# ---------------------------------------------------------------------------
# Input assembly


def test_segment_sequence_with_knowledge_and_latent(vocab):
    s = DialogueSample(context=["do you enjoy jazz ?", "hmm tell me more"],
                       response="yes i love jazz it is wonderful",
                       knowledge=["jazz is a kind of music"])
    enc = encode_sample(s, vocab, with_latent=True)
    segs = enc.segment_ids.tolist()
    k, c, r = enc.knowledge_len, enc.context_len, enc.response_len
    assert segs == [3] + [2] * k + [0] * c + [1] * r
    assert enc.position_ids.tolist() == list(range(enc.length))


def test_empty_knowledge_has_no_segment_two(vocab):
    s = DialogueSample(context=["do you enjoy jazz ?"], response="yes i love jazz it is wonderful")
    enc = encode_sample(s, vocab)
    assert 2 not in enc.segment_ids.tolist()


def test_truncation_drops_oldest_context_first(vocab):
    turns = [f"turn number {i}" for i in range(12)]
    s = DialogueSample(context=turns, response="yes")
    enc = encode_sample(s, vocab, max_len=20)
    kept = vocab.decode(enc.token_ids[: enc.context_len])
    assert "turn number 11" in kept or "<unk>" in kept  # newest turn retained
    assert enc.length <= 20
    # count of context spans kept: 4 tokens each (3 words + EOS)
    assert enc.context_len % 4 == 0
    first_kept = 12 - enc.context_len // 4
    assert first_kept > 0  # at least one old turn was dropped


def test_truncation_never_drops_response(vocab):
    s = DialogueSample(context=["do you enjoy jazz ?"] * 8,
                       response="yes i love jazz it is wonderful")
    enc = encode_sample(s, vocab, max_len=16)
    resp_ids = enc.token_ids[enc.prefix_len :]
    assert resp_ids[0] == vocab.bos_id
    assert vocab.decode(resp_ids[1:]) == "yes i love jazz it is wonderful"


def test_oversize_response_errors(vocab):
    s = DialogueSample(context=["hi"], response=" ".join(["jazz"] * 40))
    with pytest.raises(ValueError):
        encode_sample(s, vocab, max_len=16)


def test_empty_response_errors(vocab):
    with pytest.raises(ValueError):
        encode_sample(DialogueSample(context=["hi"], response=""), vocab)


def test_generation_targets_are_shifted(vocab):
    s = DialogueSample(context=["do you enjoy jazz ?"], response="yes i love jazz it is wonderful")
    enc = encode_sample(s, vocab)
    resp_in = enc.token_ids[enc.prefix_len :]
    assert resp_in[0] == vocab.bos_id
    assert list(resp_in[1:]) == list(enc.response_targets[:-1])
    assert enc.response_targets[-1] == vocab.eos_id


def test_joint_encoding_has_cls_slot(vocab):
    s = DialogueSample(context=["do you enjoy jazz ?"], response="yes i love jazz it is wonderful")
    enc = encode_joint(s, vocab)
    assert enc.token_ids[0] == vocab.cls_id
    assert enc.segment_ids[0] == DEFAULT_SCHEME.slot
    assert enc.token_ids[-1] == vocab.eos_id


def test_context_only_encoding(vocab):
    s = DialogueSample(context=["do you enjoy jazz ?"], response="x")
    enc = encode_context(s, vocab, with_latent=True, latent_id=5)
    assert enc.response_len == 0
    assert enc.latent_id == 5


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_segment_ordering_invariant(seed):
    rng = np.random.default_rng(seed)
    corpus = gen_knowledge_corpus(seed, 1) + gen_open_domain_corpus(seed, 1)
    v = Vocab.from_samples(corpus)
    s = corpus[rng.integers(len(corpus))]
    enc = encode_sample(s, v, with_latent=bool(rng.integers(2)))
    segs = enc.segment_ids.tolist()
    # knowledge tokens precede context tokens precede response tokens
    positions = {seg: [i for i, x in enumerate(segs) if x == seg] for seg in set(segs)}
    if 2 in positions and 0 in positions:
        assert max(positions[2]) < min(positions[0])
    if 0 in positions and 1 in positions:
        assert max(positions[0]) < min(positions[1])


# ---------------------------------------------------------------------------
# MLM masking


def test_mlm_rate_zero_masks_nothing(vocab):
    enc = encode_joint(gen_open_domain_corpus(0, 1)[0], vocab)
    tokens, positions, originals = mlm_mask(enc, 0.0, np.random.default_rng(0), vocab)
    assert positions.size == 0
    assert np.array_equal(tokens, enc.token_ids)


def test_mlm_fraction_close_to_rate(vocab):
    s = DialogueSample(context=[" ".join(["jazz"] * 5000)], response=" ".join(["jazz"] * 4999))
    enc = encode_sample(s, vocab, max_len=20000)
    eligible = sum(1 for t in enc.token_ids if int(t) not in vocab.special_ids)
    _, positions, _ = mlm_mask(enc, 0.15, np.random.default_rng(1), vocab)
    assert abs(positions.size / eligible - 0.15) < 0.02


def test_mlm_never_masks_specials(vocab):
    enc = encode_joint(gen_open_domain_corpus(0, 1)[0], vocab)
    rng = np.random.default_rng(2)
    for _ in range(50):
        tokens, positions, _ = mlm_mask(enc, 0.5, rng, vocab)
        for p in positions:
            assert int(enc.token_ids[p]) not in vocab.special_ids
        # untouched specials
        for i, t in enumerate(enc.token_ids):
            if int(t) in vocab.special_ids:
                assert tokens[i] == t


def test_mlm_forces_one_position_when_rate_positive(vocab):
    enc = encode_joint(gen_open_domain_corpus(0, 1)[0], vocab)
    for seed in range(30):
        _, positions, _ = mlm_mask(enc, 0.01, np.random.default_rng(seed), vocab)
        assert positions.size >= 1


# ---------------------------------------------------------------------------
# Open-domain generator


def test_open_domain_every_response_validates():
    grammar = OpenDomainGrammar()
    for s in gen_open_domain_corpus(11, 500):
        assert grammar.cluster_of(s.context, s.response) == s.cluster_id


def test_open_domain_cluster_uniformity():
    samples = gen_open_domain_corpus(13, 10_000)
    counts = np.bincount([s.cluster_id for s in samples], minlength=N_CLUSTERS)
    assert chisquare(counts).pvalue > 0.01


def test_open_domain_context_diversity():
    samples = gen_open_domain_corpus(17, 5000)
    assert len({tuple(s.context) for s in samples}) >= 50


def test_open_domain_seed_determinism():
    a = gen_open_domain_corpus(23, 200)
    b = gen_open_domain_corpus(23, 200)
    assert a == b


def test_open_domain_rejects_bad_n():
    with pytest.raises(ValueError):
        gen_open_domain_corpus(0, 0)


# ---------------------------------------------------------------------------
# Knowledge generator


def test_knowledge_three_facts_and_verbatim_value():
    grammar = KnowledgeGrammar()
    for s in gen_knowledge_corpus(29, 400):
        assert len(s.knowledge) == 3
        attr, value = grammar.value_of(s.response)
        assert any(value in fact for fact in s.knowledge)
        assert grammar.is_grounded(s, s.response)


def test_knowledge_all_three_facts_yield_valid_responses():
    grammar = KnowledgeGrammar()
    s = gen_knowledge_corpus(31, 1)[0]
    valid = grammar.valid_responses(s)
    assert len(valid) == 3
    assert s.response in valid


def test_knowledge_value_unguessable_without_facts():
    # Conditional entropy of the slot value given (entity, attribute) over
    # the grammar: values are drawn fresh per sample, so it stays maximal.
    samples = gen_knowledge_corpus(37, 3000)
    grammar = KnowledgeGrammar()
    by_attr = {}
    for s in samples:
        attr, value = grammar.value_of(s.response)
        by_attr.setdefault(attr, []).append(value)
    assert len(by_attr) == len(KNOWLEDGE_ATTRIBUTES)
    for values in by_attr.values():
        _, counts = np.unique(values, return_counts=True)
        p = counts / counts.sum()
        assert float(-(p * np.log2(p)).sum()) >= 1.5


def test_knowledge_cluster_id_absent():
    assert all(s.cluster_id is None for s in gen_knowledge_corpus(41, 20))


def test_knowledge_seed_determinism():
    assert gen_knowledge_corpus(43, 100) == gen_knowledge_corpus(43, 100)
