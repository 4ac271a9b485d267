import numpy as np
import pytest

from depth_lab.corpus import Document
from depth_lab.seeding import SENT_ASSIGN, rng_for
from depth_lab.tokenizer import (
    N_SENTINELS,
    TokenizedExample,
    Vocab,
    VocabError,
    decode,
    depth_tokenize,
    encode,
    load_vocab,
    save_vocab,
    train_vocab,
)

BYTE_VOCAB = Vocab(subwords=tuple(bytes([i]) for i in range(256)), k=20)


def docs_from(*texts):
    return [Document(doc_id=i, text=t) for i, t in enumerate(texts)]


def test_greedy_merge_learns_most_frequent_pair():
    # by hand on "aaaa": pair ("a","a") occurs 3 times -> first merge is "aa"
    vocab = train_vocab(docs_from("aaaa"), target_size=300)
    assert b"aa" in vocab.subwords


def test_every_single_byte_encodable():
    vocab = train_vocab(docs_from("abc"), target_size=300)
    for value in range(256):
        raw = bytes([value])
        text = raw.decode("utf-8", errors="ignore")
        if not text:
            continue  # non-UTF-8 lead bytes cannot appear alone in a str
        assert encode(vocab, text), f"byte {value} not encodable"
    # and the table itself covers all byte units
    assert set(vocab.subwords[:256]) == {bytes([i]) for i in range(256)}


def test_small_target_size_rejected():
    with pytest.raises(VocabError):
        train_vocab(docs_from("aaaa"), target_size=5)


def test_empty_corpus_rejected():
    with pytest.raises(VocabError):
        train_vocab([], target_size=300)


def test_encode_empty_string():
    assert encode(BYTE_VOCAB, "") == []


def test_round_trip_exact():
    vocab = train_vocab(docs_from("Hi there. Hi again."), target_size=300)
    for text in ["Hi there.", "tabs\tand\nnewlines", "mixed 3.14 and e.g. words", "ünïcödé"]:
        assert decode(vocab, encode(vocab, text)) == text


def test_emoji_falls_back_to_four_byte_ids():
    vocab = train_vocab(docs_from("plain ascii only here"), target_size=300)
    ids = encode(vocab, "\U0001f600")  # 4 bytes in UTF-8, no learned merges
    assert len(ids) == 4
    assert all(i < 256 for i in ids)
    assert decode(vocab, ids) == "\U0001f600"


def test_encode_prefers_longest_match():
    vocab = train_vocab(docs_from("abab abab abab"), target_size=300)
    assert b"ab" in vocab.subwords
    ids = encode(vocab, "abab")
    names = [vocab.subwords[i] for i in ids]
    assert b"a" not in names  # "a" alone never chosen where "ab" (or longer) matches


def test_decode_out_of_range_names_id():
    with pytest.raises(VocabError, match=str(BYTE_VOCAB.size)):
        decode(BYTE_VOCAB, [BYTE_VOCAB.size])


def test_reserved_ranges_disjoint_and_dense():
    vocab = train_vocab(docs_from("some text for training"), target_size=300)
    ranges = [
        range(0, vocab.n_subwords),
        vocab.sentinel_ids,
        vocab.sentence_ids,
        range(vocab.eosen_id, vocab.eosen_id + 1),
        range(vocab.eos_id, vocab.eos_id + 1),
        range(vocab.bos_id, vocab.bos_id + 1),
        range(vocab.pad_id, vocab.pad_id + 1),
        range(vocab.unk_id, vocab.unk_id + 1),
    ]
    seen = set()
    for r in ranges:
        ids = set(r)
        assert not ids & seen
        seen |= ids
    assert seen == set(range(vocab.size))
    assert len(list(vocab.sentinel_ids)) == N_SENTINELS
    assert len(list(vocab.sentence_ids)) == vocab.k


def test_token_names():
    v = BYTE_VOCAB
    assert v.token_name(v.sentinel_id(42)) == "<special_token_42>"
    assert v.token_name(v.sentence_id(1)) == "<SENT_1>"
    assert v.token_name(v.eosen_id) == "<EOSEN>"
    assert v.token_name(v.pad_id) == "<PAD>"


def test_depth_tokenize_two_sentences():
    vocab = BYTE_VOCAB
    doc = Document(doc_id=0, text="Hi. Bye.")
    ex = depth_tokenize(vocab, doc, rng_for(0, SENT_ASSIGN, doc.doc_id))
    assert ex.m == 2
    ids = [sid for sid, _ in ex.sentences]
    assert len(set(ids)) == 2
    assert all(vocab.is_sentence_token(i) for i in ids)
    assert list(ex.sentences[0][1]) == encode(vocab, "Hi.")
    assert list(ex.sentences[1][1]) == encode(vocab, "Bye.")


def test_depth_tokenize_truncates_beyond_k():
    vocab = BYTE_VOCAB
    text = " ".join(f"Sentence number {i} ends here." for i in range(25))
    ex = depth_tokenize(vocab, Document(doc_id=1, text=text), rng_for(0, SENT_ASSIGN, 1))
    assert ex.m == vocab.k == 20


def test_depth_tokenize_deterministic():
    doc = Document(doc_id=7, text="One. Two. Three.")
    a = depth_tokenize(BYTE_VOCAB, doc, rng_for(123, SENT_ASSIGN, 7))
    b = depth_tokenize(BYTE_VOCAB, doc, rng_for(123, SENT_ASSIGN, 7))
    assert a == b


def test_sentence_assignment_uniform():
    # chi-square over >=10000 draws of the first sentence's assigned ID;
    # critical value for k-1 = 19 dof at 0.999 is 43.82
    vocab = BYTE_VOCAB
    counts = np.zeros(vocab.k)
    n = 10_000
    for doc_id in range(n):
        ex = depth_tokenize(
            vocab, Document(doc_id=doc_id, text="Hi. Bye."), rng_for(5, SENT_ASSIGN, doc_id)
        )
        counts[ex.sentences[0][0] - vocab.sentence_base] += 1
    expected = n / vocab.k
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < 43.82


def test_flat_form_matches_frame_regex():
    vocab = BYTE_VOCAB
    for doc_id in range(20):
        ex = depth_tokenize(
            vocab,
            Document(doc_id=doc_id, text="One two. Three four. Five!"),
            rng_for(9, SENT_ASSIGN, doc_id),
        )
        flat = ex.flat_ids(vocab)
        assert flat[-1] == vocab.eos_id
        state = "expect_sent"
        for tok in flat[:-1]:
            if state == "expect_sent":
                assert vocab.is_sentence_token(tok)
                state = "body_first"
            elif vocab.is_sentence_token(tok):
                pytest.fail("nested sentence token")
            elif tok == vocab.eosen_id:
                assert state == "body_more"
                state = "expect_sent"
            else:
                assert tok < vocab.n_subwords
                state = "body_more"
        assert state == "expect_sent"


def test_vocab_round_trip(tmp_path):
    vocab = train_vocab(docs_from("round trip round trip"), target_size=300, k=12)
    path = tmp_path / "vocab.bin"
    save_vocab(vocab, path)
    loaded = load_vocab(path)
    assert loaded == vocab
    assert loaded.k == 12
    # re-save is byte-identical
    path2 = tmp_path / "vocab2.bin"
    save_vocab(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_vocab_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTAVOCAB")
    with pytest.raises(VocabError, match="magic"):
        load_vocab(path)
