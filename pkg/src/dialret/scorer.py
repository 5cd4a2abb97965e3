"""External scorer and embedder processes: wire protocol, client, stubs.

The protocol is line-delimited JSON over a child process's standard
input/output.  At startup the client sends ``{"protocol": 1}`` and the
server replies ``{"protocol": 1, "mode": "score"|"embed"}`` (embedders
add ``"dim"``).  A batch is a sequence of request lines terminated by an
empty line; the server answers with one response line per request, in
any order, terminated by an empty line.  Score requests are
``{"id", "query", "text"}`` answered by ``{"id", "score"}``; embed
requests are ``{"id", "text"}`` answered by ``{"id", "vector"}``.  A
server that cannot process a request answers ``{"id", "error"}`` and
keeps the stream alive; the client fails the whole batch rather than
return partial results.

``python -m dialret.scorer score`` and ``... embed`` serve the shipped
deterministic stubs (token-overlap scoring, hashed bag-of-words
embedding), so every consumer can be exercised without any model.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import queue
import subprocess
import sys
import threading
import time
from typing import IO, Iterable, Mapping, Sequence

PROTOCOL_VERSION = 1
DEFAULT_QUERY_TOKENS = 64
DEFAULT_TEXT_TOKENS = 112
DEFAULT_EMBED_DIM = 32


class ScorerProtocolError(RuntimeError):
    """Raised on timeouts, malformed responses, or id mismatches."""


def truncate_tokens(text: str, budget: int) -> str:
    """Keep the first ``budget`` whitespace tokens of ``text``."""
    tokens = text.split()
    if len(tokens) <= budget:
        return " ".join(tokens)
    return " ".join(tokens[:budget])


def overlap_score(query: str, text: str) -> float:
    """Multiset token overlap between two strings; the stub scorer."""
    q: dict[str, int] = {}
    for token in query.lower().split():
        q[token] = q.get(token, 0) + 1
    score = 0
    for token in text.lower().split():
        if q.get(token, 0) > 0:
            q[token] -= 1
            score += 1
    return float(score)


def hash_embed(text: str, dim: int = DEFAULT_EMBED_DIM) -> list[float]:
    """Hashed bag-of-words embedding; the stub embedder.

    Token buckets come from a stable digest so vectors are identical
    across runs and platforms.
    """
    vector = [0.0] * dim
    for token in text.lower().split():
        digest = hashlib.sha1(token.encode("utf-8")).hexdigest()
        vector[int(digest[:8], 16) % dim] += 1.0
    return vector


class StubScorer:
    """In-process stand-in for an external scorer handle."""

    def __init__(
        self,
        max_query_tokens: int = DEFAULT_QUERY_TOKENS,
        max_text_tokens: int = DEFAULT_TEXT_TOKENS,
    ):
        self.max_query_tokens = max_query_tokens
        self.max_text_tokens = max_text_tokens

    def score_batch(self, requests: Sequence[tuple[str, str, str]]) -> dict[str, float]:
        return {rid: overlap_score(query, text) for rid, query, text in requests}


class StubEmbedder:
    """In-process stand-in for an external embedder handle."""

    def __init__(
        self,
        dim: int = DEFAULT_EMBED_DIM,
        max_query_tokens: int = DEFAULT_QUERY_TOKENS,
        max_text_tokens: int = DEFAULT_TEXT_TOKENS,
    ):
        self.dim = dim
        self.max_query_tokens = max_query_tokens
        self.max_text_tokens = max_text_tokens

    def embed_batch(self, requests: Sequence[tuple[str, str]]) -> dict[str, list[float]]:
        return {rid: hash_embed(text, self.dim) for rid, text in requests}


class _LineReader:
    """Background reader so pipe reads can honor a timeout."""

    def __init__(self, stream: IO[str]):
        self._queue: queue.Queue[str | None] = queue.Queue()
        self._thread = threading.Thread(target=self._pump, args=(stream,), daemon=True)
        self._thread.start()

    def _pump(self, stream: IO[str]) -> None:
        try:
            for line in stream:
                self._queue.put(line)
        finally:
            self._queue.put(None)

    def readline(self, timeout: float) -> str | None:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            raise ScorerProtocolError(
                f"timeout after {timeout}s waiting for scorer output"
            ) from None


class ExternalProcess:
    """Client for a scorer/embedder child process speaking the protocol."""

    mode = ""

    def __init__(
        self,
        command: Sequence[str],
        timeout: float = 30.0,
        max_query_tokens: int = DEFAULT_QUERY_TOKENS,
        max_text_tokens: int = DEFAULT_TEXT_TOKENS,
    ):
        self.command = list(command)
        self.timeout = timeout
        self.max_query_tokens = max_query_tokens
        self.max_text_tokens = max_text_tokens
        self._proc: subprocess.Popen[str] | None = None
        self._reader: _LineReader | None = None
        self.dim: int | None = None

    def start(self) -> "ExternalProcess":
        if self._proc is not None:
            return self
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._reader = _LineReader(self._proc.stdout)
        self._send({"protocol": PROTOCOL_VERSION})
        reply = self._read_json("handshake")
        if reply.get("protocol") != PROTOCOL_VERSION:
            raise ScorerProtocolError(f"unsupported protocol in handshake: {reply!r}")
        if reply.get("mode") != self.mode:
            raise ScorerProtocolError(
                f"expected a {self.mode!r} process, handshake says {reply.get('mode')!r}"
            )
        if self.mode == "embed":
            dim = reply.get("dim")
            if not isinstance(dim, int) or dim < 1:
                raise ScorerProtocolError("embed handshake must declare a positive 'dim'")
            self.dim = dim
        return self

    def close(self) -> None:
        proc, self._proc = self._proc, None
        self._reader = None
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
            proc.wait(timeout=5)
        except Exception:
            proc.kill()
            proc.wait()

    def __enter__(self) -> "ExternalProcess":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _send(self, record: dict) -> None:
        assert self._proc is not None and self._proc.stdin is not None
        try:
            self._proc.stdin.write(json.dumps(record) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ScorerProtocolError(f"scorer process closed its input: {exc}") from exc

    def _read_json(self, what: str) -> dict:
        assert self._reader is not None
        line = self._reader.readline(self.timeout)
        if line is None:
            raise ScorerProtocolError(f"scorer process exited while waiting for {what}")
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScorerProtocolError(f"malformed {what} line: {line!r}") from exc
        if not isinstance(record, dict):
            raise ScorerProtocolError(f"malformed {what} line: {line!r}")
        return record

    def _roundtrip(self, requests: Sequence[dict]) -> dict[str, dict]:
        """Send one batch and collect one response per request id."""
        if self._proc is None:
            self.start()
        if not requests:
            return {}
        expected = [r["id"] for r in requests]
        if len(set(expected)) != len(expected):
            raise ScorerProtocolError("duplicate request ids within a batch")
        for record in requests:
            self._send(record)
        self._send_terminator()
        responses: dict[str, dict] = {}
        # Drain to the batch terminator even after a bad response so the
        # stream stays usable for the next batch; raise afterwards.
        failure: str | None = None
        while True:
            assert self._reader is not None
            line = self._reader.readline(self.timeout)
            if line is None:
                raise ScorerProtocolError(
                    f"scorer process exited mid-batch; pending ids: "
                    f"{sorted(set(expected) - set(responses))[:3]}"
                )
            if not line.strip():
                break
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                failure = failure or f"malformed response line: {line!r}"
                continue
            if not isinstance(record, dict):
                failure = failure or f"malformed response line: {line!r}"
                continue
            rid = record.get("id")
            if rid not in set(expected):
                failure = failure or f"response for unknown request id {rid!r}"
                continue
            if rid in responses:
                failure = failure or f"duplicate response for request id {rid!r}"
                continue
            if "error" in record:
                failure = failure or f"scorer error for request id {rid!r}: {record['error']}"
                continue
            responses[rid] = record
        if failure is not None:
            raise ScorerProtocolError(failure)
        missing = [rid for rid in expected if rid not in responses]
        if missing:
            raise ScorerProtocolError(f"no response for request id {missing[0]!r}")
        return responses

    def _send_terminator(self) -> None:
        assert self._proc is not None and self._proc.stdin is not None
        try:
            self._proc.stdin.write("\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ScorerProtocolError(f"scorer process closed its input: {exc}") from exc


class ExternalScorer(ExternalProcess):
    """Handle for a relevance-scoring process."""

    mode = "score"

    def score_batch(self, requests: Sequence[tuple[str, str, str]]) -> dict[str, float]:
        wire = [{"id": rid, "query": query, "text": text} for rid, query, text in requests]
        responses = self._roundtrip(wire)
        scores = {}
        for rid, record in responses.items():
            value = record.get("score")
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ScorerProtocolError(f"non-numeric score for request id {rid!r}")
            scores[rid] = float(value)
        return scores


class ExternalEmbedder(ExternalProcess):
    """Handle for an embedding process."""

    mode = "embed"

    def embed_batch(self, requests: Sequence[tuple[str, str]]) -> dict[str, list[float]]:
        wire = [{"id": rid, "text": text} for rid, text in requests]
        responses = self._roundtrip(wire)
        vectors = {}
        for rid, record in responses.items():
            vector = record.get("vector")
            if (
                not isinstance(vector, list)
                or not vector
                or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vector)
            ):
                raise ScorerProtocolError(f"malformed vector for request id {rid!r}")
            if self.dim is not None and len(vector) != self.dim:
                raise ScorerProtocolError(
                    f"dimension mismatch for request id {rid!r}: "
                    f"declared {self.dim}, got {len(vector)}"
                )
            vectors[rid] = [float(v) for v in vector]
        return vectors


def serve(
    mode: str,
    stdin: IO[str],
    stdout: IO[str],
    dim: int = DEFAULT_EMBED_DIM,
    delay_ms: int = 0,
    omit_ids: frozenset[str] = frozenset(),
    constant: float | None = None,
) -> int:
    """Serve the stub scorer or embedder over the wire protocol.

    ``delay_ms``, ``omit_ids``, and ``constant`` inject controlled
    misbehavior for protocol tests.
    """
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
        reply["dim"] = dim
    stdout.write(json.dumps(reply) + "\n")
    stdout.flush()
    batch: list[str] = []
    for raw in stdin:
        if raw.strip():
            batch.append(raw)
            continue
        if delay_ms:
            time.sleep(delay_ms / 1000.0)
        for request_line in batch:
            response = _answer(request_line, mode, dim, constant)
            if response.get("id") in omit_ids:
                continue
            stdout.write(json.dumps(response) + "\n")
        stdout.write("\n")
        stdout.flush()
        batch = []
    return 0


def _answer(raw: str, mode: str, dim: int, constant: float | None) -> dict:
    rid = None
    try:
        request = json.loads(raw)
        if not isinstance(request, dict):
            raise ValueError("request must be a JSON object")
        rid = request.get("id")
        if not isinstance(rid, str):
            raise ValueError("request 'id' must be a string")
        if mode == "score":
            score = overlap_score(str(request["query"]), str(request["text"]))
            if constant is not None:
                score = constant
            return {"id": rid, "score": score}
        return {"id": rid, "vector": hash_embed(str(request["text"]), dim)}
    except Exception as exc:
        return {"id": rid, "error": str(exc)}


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m dialret.scorer",
        description="Serve the deterministic stub scorer or embedder over stdio.",
    )
    parser.add_argument("mode", choices=["score", "embed"])
    parser.add_argument("--dim", type=int, default=DEFAULT_EMBED_DIM)
    parser.add_argument("--delay-ms", type=int, default=0, help="delay each batch (testing aid)")
    parser.add_argument(
        "--omit-id", action="append", default=[], help="drop responses for this id (testing aid)"
    )
    parser.add_argument(
        "--constant", type=float, default=None, help="answer every score request with this value"
    )
    args = parser.parse_args(argv)
    return serve(
        args.mode,
        sys.stdin,
        sys.stdout,
        dim=args.dim,
        delay_ms=args.delay_ms,
        omit_ids=frozenset(args.omit_id),
        constant=args.constant,
    )


if __name__ == "__main__":
    raise SystemExit(main())
