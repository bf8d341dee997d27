"""Minimal HTTP inference service over an immutable loaded model.

Endpoints:

  GET  /health   -> 200 "ok" once the model is loaded, 503 before that
  POST /predict  -> JSON body {"text": str, "age_group": int?, "sex": "F"|"M"?,
                                "top_k": int?}
                    responds {"model_id": str, "predictions": [
                        {"label": str, "probability": float}, ...]}

Status codes: 400 for a body that does not match the request schema,
422 for a well-formed request that violates an invariant (empty text,
top_k < 1, age_group outside 0..10, unknown sex), 503 before the model
load completes, 404 for unknown paths.

The bundle (parameters + embedding source + label list) never mutates
after load, so concurrent handlers share it without locks.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .dataset import N_AGE_GROUPS, SEXES, SEX_INDEX, crop_text
from .model import (
    ClassifierParams,
    EmbeddingFile,
    embed_texts,
    forward,
    fuse_batch,
    load_model,
    read_embedding_file,
)
from .text_pipeline import load_tfidf

DEFAULT_TOP_K = 5


@dataclass
class ModelBundle:
    params: ClassifierParams
    labels: tuple[str, ...]
    embedding_tag: str
    source: object
    model_id: str


def load_bundle(model_path, embedding_path=None) -> ModelBundle:
    """Load a model file plus its embedding source.

    For tfidf models the vectorizer defaults to ``tfidf.bin`` next to the
    model file (or in its parent directory); dense models need the path of
    a CCEMB1 embedding file.
    """
    model_path = Path(model_path)
    loaded = load_model(model_path)
    if loaded.embedding_tag == "tfidf":
        if embedding_path is None:
            for candidate in (model_path.parent / "tfidf.bin",
                              model_path.parent.parent / "tfidf.bin"):
                if candidate.exists():
                    embedding_path = candidate
                    break
        if embedding_path is None:
            raise FileNotFoundError(
                f"no tfidf.bin found near {model_path}; pass the vectorizer path explicitly"
            )
        source = load_tfidf(embedding_path)
    else:
        if embedding_path is None:
            candidate = model_path.parent / "embeddings.ccemb"
            if candidate.exists():
                embedding_path = candidate
        if embedding_path is None:
            raise FileNotFoundError(
                f"dense model {model_path} needs an embedding file path"
            )
        source = read_embedding_file(embedding_path)
    model_id = hashlib.sha256(model_path.read_bytes()).hexdigest()[:12]
    return ModelBundle(loaded.params, loaded.labels, loaded.embedding_tag, source, model_id)


def predict_ranked(bundle: ModelBundle, text: str, age_group=None, sex=None,
                   top_k: int = DEFAULT_TOP_K) -> list[tuple[str, float]]:
    """Top-k (label, probability) pairs, probabilities non-increasing.

    Omitted demographics contribute a zero embedding.  Text is cropped the
    same way dataset curation crops it before embedding.
    """
    text = crop_text(text)
    X = embed_texts(bundle.source, [text])
    age_idx = None if age_group is None else np.array([age_group])
    sex_idx = None if sex is None else np.array([SEX_INDEX[sex]])
    probs = forward(bundle.params, fuse_batch(X, age_idx, sex_idx, bundle.params))[0]
    k = min(int(top_k), len(bundle.labels))
    order = np.argsort(-probs, kind="stable")[:k]
    return [(bundle.labels[i], float(probs[i])) for i in order]


class _BadRequest(Exception):
    """Body does not match the documented request schema."""


class _InvariantViolation(Exception):
    """Well-formed request whose field values violate an invariant."""


def parse_predict_request(body: bytes) -> dict:
    try:
        data = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise _BadRequest(f"body is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise _BadRequest("body must be a JSON object")
    text = data.get("text")
    if not isinstance(text, str):
        raise _BadRequest("'text' is required and must be a string")
    age_group = data.get("age_group")
    if age_group is not None and (not isinstance(age_group, int) or isinstance(age_group, bool)):
        raise _BadRequest("'age_group' must be an integer")
    sex = data.get("sex")
    if sex is not None and not isinstance(sex, str):
        raise _BadRequest("'sex' must be a string")
    top_k = data.get("top_k", DEFAULT_TOP_K)
    if not isinstance(top_k, int) or isinstance(top_k, bool):
        raise _BadRequest("'top_k' must be an integer")
    unknown = set(data) - {"text", "age_group", "sex", "top_k"}
    if unknown:
        raise _BadRequest(f"unknown fields: {sorted(unknown)}")

    if not text.strip():
        raise _InvariantViolation("'text' must be non-empty")
    if top_k < 1:
        raise _InvariantViolation("'top_k' must be >= 1")
    if age_group is not None and not 0 <= age_group < N_AGE_GROUPS:
        raise _InvariantViolation(f"'age_group' must be in [0, {N_AGE_GROUPS - 1}]")
    if sex is not None and sex not in SEXES:
        raise _InvariantViolation(f"'sex' must be one of {list(SEXES)}")
    return {"text": text, "age_group": age_group, "sex": sex, "top_k": top_k}


class PredictHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _respond(self, status: int, payload, content_type="application/json"):
        body = payload if isinstance(payload, bytes) else json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path != "/health":
            self._respond(404, {"error": "not found"})
            return
        if self.server.bundle is None:
            self._respond(503, {"error": "model is still loading"})
        else:
            self._respond(200, b"ok", content_type="text/plain")

    def do_POST(self):
        if self.path != "/predict":
            self._respond(404, {"error": "not found"})
            return
        bundle = self.server.bundle
        if bundle is None:
            self._respond(503, {"error": "model is still loading"})
            return
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        try:
            req = parse_predict_request(body)
            ranked = predict_ranked(
                bundle, req["text"], req["age_group"], req["sex"], req["top_k"]
            )
        except _BadRequest as exc:
            self._respond(400, {"error": str(exc)})
            return
        except _InvariantViolation as exc:
            self._respond(422, {"error": str(exc)})
            return
        except KeyError as exc:
            # Dense embedding files only cover known texts.
            self._respond(422, {"error": str(exc)})
            return
        self._respond(200, {
            "model_id": bundle.model_id,
            "predictions": [
                {"label": label, "probability": prob} for label, prob in ranked
            ],
        })


class InferenceServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, bundle: ModelBundle | None = None):
        super().__init__(address, PredictHandler)
        self.bundle = bundle


def serve(model_path, bind: str = "127.0.0.1:8377", embedding_path=None) -> None:
    """Start the service; the model loads in the background so /health can
    report 503 until it is ready."""
    host, _, port = bind.partition(":")
    server = InferenceServer((host, int(port)))

    def _load():
        server.bundle = load_bundle(model_path, embedding_path)

    loader = threading.Thread(target=_load, daemon=True)
    loader.start()
    print(f"serving on http://{host}:{port} (model {model_path})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
