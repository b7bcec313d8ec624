# Copyright 2026 The kbvqa Authors
# SPDX-License-Identifier: Apache-2.0

import math
import pathlib

import numpy as np
import pytest

import kbvqa

TINY = pathlib.Path(__file__).resolve().parents[2] / "tests" / "fixtures" / "tiny"
BLANC = "https://en.wikipedia.org/wiki/Mont_Blanc"


@pytest.fixture(scope="module")
def kb():
    return kbvqa.KnowledgeBase.load(TINY / "kb.jsonl", TINY / "images.jsonl")


def test_knowledge_base(kb):
    assert kb.stats() == {"entries": 3, "sections": 4, "images": 3}
    assert BLANC in kb
    assert kb.url_of_image("a") == BLANC
    assert kb.url_of_image("zzz") is None
    assert kb.sections(BLANC)[0] == (BLANC + "#0", "Mont Blanc ## Ascent ## First climbed 1786.")


def test_embeddings_round_trip(tmp_path):
    arr = np.array([[3, 4], [0, 2]], dtype=np.float32)
    m = kbvqa.Embeddings.from_numpy(["x", "y"], arr)
    unit = m.normalize()
    assert unit.normalized
    np.testing.assert_allclose(unit.row("x"), [0.6, 0.8], rtol=1e-6)
    unit.save(tmp_path / "m.evec")
    back = kbvqa.Embeddings.load(tmp_path / "m.evec")
    assert back == unit
    assert back.ids == ["x", "y"]
    assert back.to_numpy().shape == (2, 2)


def test_bad_file_raises_data_error(tmp_path):
    (tmp_path / "bad.evec").write_bytes(b"NOPE")
    with pytest.raises(kbvqa.DataError):
        kbvqa.Embeddings.load(tmp_path / "bad.evec")


def test_search_and_rerank(kb):
    index = kbvqa.FlatIndex(kbvqa.Embeddings.load(TINY / "index.evec"))
    cands = index.search(np.array([1, 0], dtype=np.float32), 2, kb)
    assert [c["image_id"] for c in cands] == ["a", "c"]
    assert cands[1]["visual_score"] == pytest.approx(0.6)

    sections = kbvqa.Embeddings.load(TINY / "sections.evec")
    tokens = np.array([[1, 0, 0], [0, 0, 1]], dtype=np.float32)
    ranked = kbvqa.rerank(tokens, cands, sections, kb)
    assert ranked[0]["section_id"] == BLANC + "#0"
    assert ranked[0]["fused"] == pytest.approx(1.0)

    with pytest.raises(kbvqa.UsageError):
        kbvqa.rerank(tokens, cands, sections, kb, alpha=1.5)


def test_mine_negatives(kb):
    cands = [{"image_id": "a", "entry_url": BLANC, "visual_score": 1.0},
             {"image_id": "c", "entry_url": "https://en.wikipedia.org/wiki/Matterhorn", "visual_score": 0.6}]
    ex = kbvqa.mine_negatives("q1", BLANC, BLANC + "#0", cands, kb, n=24, seed=3)
    assert ex["short"]
    assert ex["negative_provenance"] == ["hard_negative_entry", "positive_entry_nonevidence"]


def test_contrastive_loss_values():
    tokens = np.array([[1, 0]], dtype=np.float32)
    pos = np.array([1, 0], dtype=np.float32)
    out = kbvqa.contrastive_loss(tokens, pos, np.array([[0, 1]], dtype=np.float32), temperature=1.0)
    assert out["loss"] == pytest.approx(0.31326, abs=1e-5)
    assert out["grad_tokens"].shape == (1, 2)
    assert out["grad_negatives"].shape == (1, 2)
    same = kbvqa.contrastive_loss(tokens, pos, pos.reshape(1, 2), temperature=1.0)
    assert same["loss"] == pytest.approx(math.log(2), abs=1e-9)


def test_evaluation_helpers():
    r = kbvqa.recall_at_k([("A", ["A", "B"]), ("C", ["A", "B", "C"])], [1, 5])
    assert r == {1: 0.5, 5: 1.0}
    assert kbvqa.normalize_answer("The Alps") == "alps"
    assert kbvqa.exact_match("Mont Blanc.", ["mont blanc"])


def test_render_prompt():
    assert kbvqa.render_prompt("evqa", "C", "Q") == [("user", "Context: C \nQuestion: Q\nThe answer is:")]
    msgs = kbvqa.render_prompt("infoseek", "C", "Q")
    assert msgs[0][0] == "system"
    with pytest.raises(kbvqa.UsageError):
        kbvqa.render_prompt("nope", "C", "Q")
