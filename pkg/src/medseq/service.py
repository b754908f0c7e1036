"""Read-only HTTP inference service over a loaded checkpoint.

JSON in, JSON out, no streaming, no state: every request is answered from
an immutable model snapshot, so repeated requests are idempotent and
concurrent requests match serial execution. Error bodies are machine
readable: {"error": code, "detail": text} with 400 for malformed JSON and
422 for semantically invalid input (unknown concepts, bad shapes).

Endpoints: GET /v1/health, GET /v1/model, GET /v1/vocab?q=&limit=,
POST /v1/predict, POST /v1/mcq, POST /v1/saliency.
"""

from __future__ import annotations

import json
import pathlib
import sys
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import probe as probe_mod
from . import timeline as tl
from . import training as tr


@dataclass
class ServiceConfig:
    checkpoint_path: str
    vocab_path: str
    host: str = "127.0.0.1"
    port: int = 8077
    labels_path: str | None = None
    ui_dir: str | None = None
    max_options: int = 10
    max_context: int = 50
    max_body_bytes: int = 1 << 20


class ApiError(Exception):
    def __init__(self, status: int, code: str, detail: str):
        super().__init__(detail)
        self.status = status
        self.code = code
        self.detail = detail


def _load_labels(path) -> dict[str, str]:
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            code, _, label = line.partition("\t")
            labels[code] = label
    return labels


def create_app(config: ServiceConfig) -> FastAPI:
    vocab = tl.Vocab.load(config.vocab_path)
    ckpt = tr.load_checkpoint(config.checkpoint_path,
                              expect_vocab_hash=vocab.content_hash())
    model = tr.model_from_checkpoint(ckpt, vocab=vocab)
    labels = _load_labels(config.labels_path) if config.labels_path else {}
    concept_mask = vocab.concept_mask()
    manifest = ckpt.manifest()
    manifest.pop("tensors", None)

    app = FastAPI(title="medseq inference service", docs_url=None,
                  redoc_url=None)

    @app.exception_handler(ApiError)
    async def api_error_handler(request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"error": exc.code, "detail": exc.detail})

    async def read_json(request: Request) -> dict:
        body = await request.body()
        if len(body) > config.max_body_bytes:
            raise ApiError(413, "too_large",
                           f"request body over {config.max_body_bytes} bytes")
        try:
            parsed = json.loads(body)
        except json.JSONDecodeError as exc:
            raise ApiError(400, "bad_json", f"malformed JSON: {exc}") from None
        if not isinstance(parsed, dict):
            raise ApiError(400, "bad_json", "request body must be an object")
        return parsed

    def parse_tokens(raw, field: str) -> list[tl.Token]:
        if not isinstance(raw, list) or not raw:
            raise ApiError(422, "bad_request",
                           f"{field} must be a non-empty token list")
        if len(raw) > config.max_context:
            raise ApiError(422, "context_too_long",
                           f"{field} exceeds {config.max_context} tokens")
        tokens = []
        for item in raw:
            if not isinstance(item, dict) or "kind" not in item or "value" not in item:
                raise ApiError(422, "bad_token",
                               "tokens are {\"kind\": ..., \"value\": ...}")
            kind, value = item["kind"], str(item["value"])
            if kind == tl.KIND_AGE:
                if not value.isdigit() or not (0 <= int(value) <= 120):
                    raise ApiError(422, "bad_age",
                                   f"age {value!r} outside 0..120")
            elif kind != tl.KIND_CONCEPT:
                raise ApiError(422, "bad_token", f"unknown token kind {kind!r}")
            entry = vocab.get(kind, value)
            if entry is None:
                raise ApiError(422, "unknown_concept",
                               f"{kind}:{value} not in vocabulary")
            tokens.append(tl.Token(kind, entry.id))
        return tokens

    def display(code: str) -> str:
        return labels.get(code, code)

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "family": ckpt.family}

    @app.get("/v1/model")
    async def model_manifest():
        return manifest

    @app.get("/v1/vocab")
    async def vocab_search(q: str = "", limit: int = 20):
        limit = max(1, min(int(limit), 200))
        needle = q.lower()
        rows = []
        for e in vocab.concept_entries():
            label = display(e.value)
            if needle in e.value.lower() or needle in label.lower():
                rows.append(e)
        rows.sort(key=lambda e: (-e.frequency, e.id))
        return {"matches": [{"concept": e.value, "label": display(e.value),
                             "frequency": e.frequency} for e in rows[:limit]]}

    @app.post("/v1/predict")
    async def predict(request: Request):
        body = await read_json(request)
        tokens = parse_tokens(body.get("tokens"), "tokens")
        top_k = body.get("top_k", 5)
        if not isinstance(top_k, int) or not (1 <= top_k <= 50):
            raise ApiError(422, "bad_request", "top_k must be an int in 1..50")
        ids = np.array([t.id for t in tokens])
        dist = model.next_disorder_distribution(ids, concept_mask)
        order = sorted(np.flatnonzero(concept_mask),
                       key=lambda i: (-dist[i], i))[:top_k]
        return {"candidates": [{"concept": vocab.entry(i).value,
                                "label": display(vocab.entry(i).value),
                                "probability": float(dist[i])}
                               for i in order]}

    @app.post("/v1/mcq")
    async def mcq(request: Request):
        body = await read_json(request)
        history = parse_tokens(body.get("history"), "history")
        options = body.get("options")
        if not isinstance(options, list) or not all(isinstance(o, str)
                                                    for o in options):
            raise ApiError(422, "bad_request", "options must be a string list")
        case = probe_mod.McqCase(history=history, options=options)
        try:
            case.validate(vocab, max_options=config.max_options)
            ranked = probe_mod.mcq_rank(model, case, vocab)
        except probe_mod.ProbeError as exc:
            raise ApiError(422, "bad_options", str(exc)) from None
        return {"options": [{"concept": o, "label": display(o),
                             "probability": p} for o, p in ranked]}

    @app.post("/v1/saliency")
    async def saliency(request: Request):
        body = await read_json(request)
        history = parse_tokens(body.get("history"), "history")
        target = body.get("target", "argmax")
        try:
            result = probe_mod.saliency(model, history, vocab, target=target)
        except (probe_mod.ProbeError, tl.TimelineError) as exc:
            raise ApiError(422, "bad_target", str(exc)) from None
        out = result.to_json(vocab)
        out["target_label"] = display(out["target"])
        return out

    if config.ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=config.ui_dir, html=True),
                  name="ui")
    return app


def run_service(config: ServiceConfig) -> int:
    import uvicorn
    try:
        app = create_app(config)
    except (tr.CheckpointError, tl.TimelineError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    except OSError as exc:
        print(f"error: cannot bind {config.host}:{config.port}: {exc}",
              file=sys.stderr)
        return 1
    return 0
