"""The inference service, exercised in-process (no ports needed).

Builds a small checkpoint, mounts it in the HTTP app, and walks the six
endpoints the web console consumes. `medseq serve` runs the same app on a
real socket.
"""

import json
import tempfile
import pathlib

from fastapi.testclient import TestClient

from medseq import timeline as tl
from medseq import training as tr
from medseq.model import ModelConfig, TransformerLM
from medseq.service import ServiceConfig, create_app
from medseq.timeline import (KIND_AGE, KIND_CONCEPT, KIND_PAD, PAD_VALUE,
                             Vocab, VocabEntry)

root = pathlib.Path(tempfile.mkdtemp(prefix="medseq-demo-"))
concepts = ["C_keto", "C_t1dm", "C_t2dm", "C_htn", "C_ulcer"]
labels = {"C_keto": "Ketoacidosis", "C_t1dm": "Type 1 Diabetes Mellitus",
          "C_t2dm": "Type 2 Diabetes Mellitus", "C_htn": "Hypertension",
          "C_ulcer": "Ulcer of foot"}

entries = [VocabEntry(str(a), KIND_AGE, a, 0) for a in range(121)]
entries.append(VocabEntry(PAD_VALUE, KIND_PAD, 121, 0))
entries += [VocabEntry(c, KIND_CONCEPT, 122 + i, 50 - i)
            for i, c in enumerate(concepts)]
vocab = Vocab(entries)
vocab.save(root / "vocab.tsv")
(root / "labels.tsv").write_text(
    "\n".join(f"{c}\t{l}" for c, l in labels.items()) + "\n")

model = TransformerLM(ModelConfig(vocab_size=len(vocab), n_layers=1, n_heads=2,
                                  d_model=16, max_seq=50), seed=0, vocab=vocab)
ckpt = tr.Checkpoint(family="transformer", model_config=model.config.to_json(),
                     train_config={}, step=0, val_loss=None,
                     vocab_hash=vocab.content_hash(),
                     tensors={k: v.data for k, v in model.params.items()})
tr.save_checkpoint(ckpt, root / "ckpt")

client = TestClient(create_app(ServiceConfig(
    checkpoint_path=str(root / "ckpt"), vocab_path=str(root / "vocab.tsv"),
    labels_path=str(root / "labels.tsv"))))


def show(title, response):
    print(f"\n== {title} (HTTP {response.status_code}) ==")
    print(json.dumps(response.json(), indent=2)[:600])


show("GET /v1/health", client.get("/v1/health"))
show("GET /v1/vocab?q=diabetes", client.get("/v1/vocab",
                                            params={"q": "diabetes"}))

history = [{"kind": "AGE", "value": "49"}, {"kind": "CONCEPT", "value": "C_keto"},
           {"kind": "CONCEPT", "value": "C_ulcer"}]
show("POST /v1/predict", client.post("/v1/predict",
                                     json={"tokens": history, "top_k": 3}))
show("POST /v1/mcq", client.post("/v1/mcq", json={
    "history": history, "options": ["C_t1dm", "C_t2dm"]}))
show("POST /v1/saliency", client.post("/v1/saliency", json={"history": history}))
show("error path: malformed JSON", client.post(
    "/v1/predict", content=b"{oops", headers={"content-type": "application/json"}))
show("error path: unknown concept", client.post(
    "/v1/predict", json={"tokens": [{"kind": "CONCEPT", "value": "C_nope"}]}))
