"""Golden request/response suite for the HTTP service (no UI involved)."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from medseq import timeline as tl
from medseq import training as tr
from medseq.model import ModelConfig, TransformerLM
from medseq.service import ServiceConfig, create_app
from medseq.timeline import (KIND_AGE, KIND_CONCEPT, KIND_PAD, PAD_VALUE,
                             Vocab, VocabEntry)

CONCEPTS = ["C_keto", "C_t1dm", "C_t2dm", "C_htn", "C_ckd"]


@pytest.fixture(scope="module")
def service(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    entries = [VocabEntry(str(a), KIND_AGE, a, 0) for a in range(121)]
    entries.append(VocabEntry(PAD_VALUE, KIND_PAD, 121, 0))
    entries += [VocabEntry(c, KIND_CONCEPT, 122 + i, 10 - i)
                for i, c in enumerate(CONCEPTS)]
    vocab = Vocab(entries)
    vocab.save(root / "vocab.tsv")

    model = TransformerLM(ModelConfig(vocab_size=len(vocab), n_layers=1,
                                      n_heads=2, d_model=16, max_seq=50),
                          seed=0, vocab=vocab)
    ckpt = tr.Checkpoint(family="transformer",
                         model_config=model.config.to_json(),
                         train_config={}, step=0, val_loss=None,
                         vocab_hash=vocab.content_hash(),
                         tensors={k: v.data for k, v in model.params.items()})
    tr.save_checkpoint(ckpt, root / "ckpt")
    labels = root / "labels.tsv"
    labels.write_text("C_keto\tKetoacidosis\nC_t1dm\tType 1 Diabetes\n")
    config = ServiceConfig(checkpoint_path=str(root / "ckpt"),
                           vocab_path=str(root / "vocab.tsv"),
                           labels_path=str(labels))
    app = create_app(config)
    return TestClient(app)


def hist(*specs):
    out = []
    for s in specs:
        if isinstance(s, int):
            out.append({"kind": "AGE", "value": str(s)})
        else:
            out.append({"kind": "CONCEPT", "value": s})
    return out


def test_health(service):
    r = service.get("/v1/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok", "family": "transformer"}


def test_model_manifest_echo(service):
    r = service.get("/v1/model")
    assert r.status_code == 200
    body = r.json()
    assert body["family"] == "transformer"
    assert body["model_config"]["d_model"] == 16
    assert "tensors" not in body


def test_vocab_search_ordering_and_limits(service):
    r = service.get("/v1/vocab", params={"q": "", "limit": 3})
    assert r.status_code == 200
    matches = r.json()["matches"]
    assert len(matches) == 3
    freqs = [m["frequency"] for m in matches]
    assert freqs == sorted(freqs, reverse=True)

    r = service.get("/v1/vocab", params={"q": "t1dm"})
    assert [m["concept"] for m in r.json()["matches"]] == ["C_t1dm"]

    # label text is searchable too
    r = service.get("/v1/vocab", params={"q": "ketoacid"})
    assert [m["concept"] for m in r.json()["matches"]] == ["C_keto"]
    assert r.json()["matches"][0]["label"] == "Ketoacidosis"

    r = service.get("/v1/vocab", params={"q": "zzz"})
    assert r.status_code == 200 and r.json()["matches"] == []

    r = service.get("/v1/vocab", params={"q": "", "limit": 1})
    assert len(r.json()["matches"]) == 1


def test_predict_contract(service):
    r = service.post("/v1/predict",
                     json={"tokens": hist(49, "C_keto"), "top_k": 5})
    assert r.status_code == 200
    cands = r.json()["candidates"]
    assert len(cands) == 5
    probs = [c["probability"] for c in cands]
    assert probs == sorted(probs, reverse=True)
    assert sum(probs) == pytest.approx(1.0, abs=1e-6)   # 5 concepts total
    assert {c["concept"] for c in cands} == set(CONCEPTS)


def test_predict_is_idempotent(service):
    payload = {"tokens": hist(60, "C_htn"), "top_k": 3}
    a = service.post("/v1/predict", json=payload)
    b = service.post("/v1/predict", json=payload)
    assert a.content == b.content


def test_mcq_contract(service):
    r = service.post("/v1/mcq", json={"history": hist(40, "C_keto"),
                                      "options": ["C_t1dm", "C_t2dm"]})
    assert r.status_code == 200
    opts = r.json()["options"]
    assert sum(o["probability"] for o in opts) == pytest.approx(1.0, abs=1e-6)
    assert opts[0]["probability"] >= opts[1]["probability"]


def test_saliency_contract(service):
    r = service.post("/v1/saliency", json={"history": hist(40, "C_keto", 41)})
    assert r.status_code == 200
    body = r.json()
    assert len(body["weights"]) == 3
    assert sum(body["weights"]) == pytest.approx(1.0, abs=1e-6)
    assert body["target"] in CONCEPTS


def test_malformed_json_is_400(service):
    for path in ("/v1/predict", "/v1/mcq", "/v1/saliency"):
        r = service.post(path, content=b"{nope",
                         headers={"content-type": "application/json"})
        assert r.status_code == 400
        body = r.json()
        assert body["error"] == "bad_json" and "detail" in body


def test_unknown_concept_is_422(service):
    r = service.post("/v1/predict", json={"tokens": hist(40, "C_missing")})
    assert r.status_code == 422
    assert r.json()["error"] == "unknown_concept"

    r = service.post("/v1/mcq", json={"history": hist(40, "C_keto"),
                                      "options": ["C_t1dm", "C_missing"]})
    assert r.status_code == 422

    r = service.post("/v1/saliency", json={"history": hist(40, "C_keto"),
                                           "target": "C_missing"})
    assert r.status_code == 422


def test_validation_errors_are_422(service):
    r = service.post("/v1/predict", json={"tokens": []})
    assert r.status_code == 422
    r = service.post("/v1/predict", json={"tokens": hist(300, "C_keto")})
    assert r.status_code == 422 and r.json()["error"] == "bad_age"
    r = service.post("/v1/predict",
                     json={"tokens": hist(40, "C_keto"), "top_k": 0})
    assert r.status_code == 422
    r = service.post("/v1/mcq", json={"history": hist(40, "C_keto"),
                                      "options": ["C_t1dm"] * 11})
    assert r.status_code == 422
    too_long = hist(*(["C_keto", "C_htn"] * 26))
    r = service.post("/v1/predict", json={"tokens": too_long})
    assert r.status_code == 422 and r.json()["error"] == "context_too_long"


def test_vocab_hash_mismatch_refuses_to_start(tmp_path, service):
    entries = [VocabEntry(str(a), KIND_AGE, a, 0) for a in range(121)]
    entries.append(VocabEntry(PAD_VALUE, KIND_PAD, 121, 0))
    entries.append(VocabEntry("OTHER", KIND_CONCEPT, 122, 1))
    other = Vocab(entries)
    other.save(tmp_path / "other.tsv")
    model = TransformerLM(ModelConfig(vocab_size=len(other), n_layers=1,
                                      n_heads=2, d_model=8), seed=0)
    ckpt = tr.Checkpoint(family="transformer",
                         model_config=model.config.to_json(), train_config={},
                         step=0, val_loss=None, vocab_hash="deadbeef",
                         tensors={k: v.data for k, v in model.params.items()})
    tr.save_checkpoint(ckpt, tmp_path / "ckpt")
    with pytest.raises(tr.CheckpointError):
        create_app(ServiceConfig(checkpoint_path=str(tmp_path / "ckpt"),
                                 vocab_path=str(tmp_path / "other.tsv")))
