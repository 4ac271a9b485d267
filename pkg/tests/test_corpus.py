import json
import math

import pytest

from depth_lab.corpus import (
    CorpusConfig,
    CorpusError,
    CorpusStats,
    Document,
    assign_to_val,
    load_corpus,
    split_corpus,
)


def write_lines(tmp_path, lines, name="corpus.txt"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_plain_lines_in_order(tmp_path):
    path = write_lines(tmp_path, ["one fish.", "two fish.", "red fish."])
    docs = list(load_corpus(CorpusConfig(path=path)))
    assert [d.doc_id for d in docs] == [0, 1, 2]
    assert [d.text for d in docs] == ["one fish.", "two fish.", "red fish."]


def test_blank_line_skipped_and_counted(tmp_path):
    path = write_lines(tmp_path, ["alpha", "   ", "gamma"])
    stats = CorpusStats()
    docs = list(load_corpus(CorpusConfig(path=path), stats))
    assert len(docs) == 2
    assert stats.skipped_empty == 1
    assert stats.yielded == 2


def test_json_lines_text_extraction(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text(json.dumps({"text": "Hi there."}) + "\n", encoding="utf-8")
    docs = list(load_corpus(CorpusConfig(path=path, format="json-lines")))
    assert docs == [Document(doc_id=0, text="Hi there.")]


def test_malformed_json_names_line(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"text": "ok"}\n{broken\n', encoding="utf-8")
    with pytest.raises(CorpusError, match=":2:"):
        list(load_corpus(CorpusConfig(path=path, format="json-lines")))


def test_json_lines_missing_text_field(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"body": "nope"}\n', encoding="utf-8")
    with pytest.raises(CorpusError, match="text"):
        list(load_corpus(CorpusConfig(path=path, format="json-lines")))


def test_unreadable_path_is_fatal(tmp_path):
    with pytest.raises(CorpusError, match="not readable"):
        list(load_corpus(CorpusConfig(path=tmp_path / "missing.txt")))


def test_bad_config_rejected(tmp_path):
    with pytest.raises(CorpusError):
        CorpusConfig(path=tmp_path, format="parquet")
    with pytest.raises(CorpusError):
        CorpusConfig(path=tmp_path, val_fraction=1.0)


def docs(n):
    return [Document(doc_id=i, text=f"doc {i}") for i in range(n)]


def test_split_zero_fraction_all_train():
    train, val = split_corpus(docs(100), val_fraction=0.0, seed=3)
    assert len(train) == 100 and val == []


def test_split_binomial_bound():
    # binomial oracle: n=10000, p=0.5 -> sigma = sqrt(n p (1-p)) = 50; 3 sigma = 150
    train, val = split_corpus(docs(10_000), val_fraction=0.5, seed=7)
    assert len(train) + len(val) == 10_000
    sigma = math.sqrt(10_000 * 0.25)
    assert abs(len(val) - 5_000) <= 3 * sigma


def test_split_stable_across_runs():
    a = split_corpus(docs(500), val_fraction=0.25, seed=11)
    b = split_corpus(docs(500), val_fraction=0.25, seed=11)
    assert a == b
    # pure in (seed, doc_id): same decision regardless of surrounding stream
    for doc in docs(50):
        assert assign_to_val(doc.doc_id, 0.25, 11) == (doc in a[1])


def test_split_changes_with_seed():
    _, val_a = split_corpus(docs(2_000), val_fraction=0.5, seed=1)
    _, val_b = split_corpus(docs(2_000), val_fraction=0.5, seed=2)
    assert {d.doc_id for d in val_a} != {d.doc_id for d in val_b}
