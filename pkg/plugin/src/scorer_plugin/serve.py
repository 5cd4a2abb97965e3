"""JSON-lines stdio server for relevance scoring and sentence embedding.

Wire contract, version 1.  The client opens with ``{"protocol": 1}``;
the server answers ``{"protocol": 1, "mode": "score"}`` or
``{"protocol": 1, "mode": "embed", "dim": D}``.  A batch is one request
object per line followed by a blank line; the server answers with one
response per request in any order, then a blank line.  Requests carry a
string ``id`` plus ``query`` and ``text`` (score) or ``text`` (embed).
A malformed request yields ``{"id": ..., "error": ...}`` for that id
while the rest of the batch and the stream continue.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import IO, Sequence

from .backends import (
    DEFAULT_HASH_DIM,
    DEFAULT_QUERY_TOKENS,
    DEFAULT_TEXT_TOKENS,
    BackendUnavailable,
    ScorerConfig,
    make_backend,
)

PROTOCOL_VERSION = 1


def _parse_request(raw: str, mode: str) -> tuple[dict | None, dict | None]:
    """Return ``(request, error_record)``; exactly one side is set."""
    rid = None
    try:
        record = json.loads(raw)
        if not isinstance(record, dict):
            raise ValueError("request must be a JSON object")
        rid = record.get("id")
        if not isinstance(rid, str):
            raise ValueError("request 'id' must be a string")
        if mode == "score" and not isinstance(record.get("query"), str):
            raise ValueError("score request needs a string 'query'")
        if not isinstance(record.get("text"), str):
            raise ValueError(f"{mode} request needs a string 'text'")
        return record, None
    except Exception as exc:
        return None, {"id": rid, "error": str(exc)}


def _respond(batch: list[str], mode: str, backend, stdout: IO[str]) -> None:
    requests: list[dict] = []
    failures: list[dict] = []
    for raw in batch:
        request, failure = _parse_request(raw, mode)
        if request is not None:
            requests.append(request)
        else:
            failures.append(failure)
    responses: list[dict] = []
    if mode == "score":
        scores = backend.score_batch([(r["query"], r["text"]) for r in requests])
        for request, score in zip(requests, scores):
            if math.isfinite(score):
                responses.append({"id": request["id"], "score": score})
            else:
                responses.append({"id": request["id"], "error": "non-finite score"})
    else:
        vectors = backend.embed_batch([r["text"] for r in requests])
        for request, vector in zip(requests, vectors):
            responses.append({"id": request["id"], "vector": vector})
    for record in responses + failures:
        stdout.write(json.dumps(record) + "\n")
    stdout.write("\n")
    stdout.flush()


def serve(mode: str, backend, stdin: IO[str], stdout: IO[str]) -> int:
    line = stdin.readline()
    if not line:
        return 1
    try:
        handshake = json.loads(line)
    except json.JSONDecodeError:
        handshake = None
    if not isinstance(handshake, dict) or handshake.get("protocol") != PROTOCOL_VERSION:
        stdout.write(json.dumps({"error": "unsupported handshake"}) + "\n")
        stdout.flush()
        return 1
    reply: dict = {"protocol": PROTOCOL_VERSION, "mode": mode}
    if mode == "embed":
        reply["dim"] = backend.dim
    stdout.write(json.dumps(reply) + "\n")
    stdout.flush()
    batch: list[str] = []
    for raw in stdin:
        if raw.strip():
            batch.append(raw)
        else:
            _respond(batch, mode, backend, stdout)
            batch = []
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="scorer-plugin",
        description="Serve relevance scores or sentence embeddings over stdio.",
    )
    parser.add_argument("mode", choices=["score", "embed"])
    parser.add_argument(
        "--backend",
        choices=["hash", "model"],
        default="hash",
        help="hash: deterministic, no downloads; model: the pinned neural models",
    )
    parser.add_argument("--model", default="", help="override the pinned model identifier")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--dim", type=int, default=DEFAULT_HASH_DIM, help="hash backend dimension")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--max-query-tokens", type=int, default=DEFAULT_QUERY_TOKENS)
    parser.add_argument("--max-text-tokens", type=int, default=DEFAULT_TEXT_TOKENS)
    args = parser.parse_args(argv)
    config = ScorerConfig(
        model=args.model,
        device=args.device,
        max_query_tokens=args.max_query_tokens,
        max_text_tokens=args.max_text_tokens,
        batch_size=args.batch_size,
    )
    try:
        backend = make_backend(args.mode, args.backend, config, dim=args.dim)
    except BackendUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return serve(args.mode, backend, sys.stdin, sys.stdout)


if __name__ == "__main__":
    raise SystemExit(main())
