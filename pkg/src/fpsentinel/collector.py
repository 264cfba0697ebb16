"""Telemetry collector endpoint.

Accepts POST /v1/telemetry with a JSON-lines body, validates each line, and
appends the accepted traces to a spool file in the same wire format, so the
spool can be ingested directly.  Malformed lines are counted and reported,
never abort a batch.  Raw argument/return payloads are rejected by the
schema validator, so they cannot reach the spool.

Authentication is a shared bearer token from the FP_SENTINEL_TOKEN
environment variable; when unset the collector is open (local testing).
"""

from __future__ import annotations

import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import __version__
from .errors import FpSentinelError
from .telemetry import parse_telemetry_line, trace_to_obj

DEFAULT_MAX_BODY_BYTES = 8 * 1024 * 1024
TOKEN_ENV_VAR = "FP_SENTINEL_TOKEN"


class CollectorState:
    def __init__(self, spool_path: str, token: str | None, max_body_bytes: int):
        self.spool_path = spool_path
        self.token = token
        self.max_body_bytes = max_body_bytes
        self.lock = threading.Lock()
        self.accepted_total = 0
        self.rejected_total = 0

    def append_traces(self, lines: list[str]) -> None:
        # Single-writer spool: appends are serialized through the lock.
        with self.lock:
            with open(self.spool_path, "a", encoding="utf-8") as fh:
                for line in lines:
                    fh.write(line + "\n")


class CollectorHandler(BaseHTTPRequestHandler):
    server_version = f"fp-sentinel/{__version__}"
    state: CollectorState

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _authorized(self) -> bool:
        if not self.state.token:
            return True
        header = self.headers.get("Authorization", "")
        return header == f"Bearer {self.state.token}"

    def do_GET(self):
        if self.path == "/v1/health":
            self._send_json(200, {"status": "ok", "version": __version__})
        else:
            self._send_json(404, {"error": "not found"})

    def do_POST(self):
        if self.path != "/v1/telemetry":
            self._send_json(404, {"error": "not found"})
            return
        if not self._authorized():
            self._send_json(401, {"error": "missing or invalid bearer token"})
            return
        length = int(self.headers.get("Content-Length", 0))
        if length > self.state.max_body_bytes:
            self._send_json(413, {"error": "request body too large"})
            return
        body = self.rfile.read(length).decode("utf-8", errors="replace")
        accepted_lines: list[str] = []
        rejected = 0
        for line in body.splitlines():
            if not line.strip():
                continue
            try:
                trace = parse_telemetry_line(line)
            except FpSentinelError:
                rejected += 1
                continue
            accepted_lines.append(
                json.dumps(trace_to_obj(trace), sort_keys=True, separators=(",", ":"),
                           ensure_ascii=False)
            )
        if accepted_lines:
            self.state.append_traces(accepted_lines)
        with self.state.lock:
            self.state.accepted_total += len(accepted_lines)
            self.state.rejected_total += rejected
        self._send_json(200, {"accepted": len(accepted_lines), "rejected": rejected})


def make_server(
    host: str,
    port: int,
    spool_path: str,
    token: str | None = None,
    max_body_bytes: int = DEFAULT_MAX_BODY_BYTES,
) -> ThreadingHTTPServer:
    """Build the collector HTTP server; caller runs serve_forever()."""
    if token is None:
        token = os.environ.get(TOKEN_ENV_VAR) or None
    state = CollectorState(spool_path=spool_path, token=token, max_body_bytes=max_body_bytes)
    handler = type("BoundCollectorHandler", (CollectorHandler,), {"state": state})
    server = ThreadingHTTPServer((host, port), handler)
    server.collector_state = state  # type: ignore[attr-defined]
    return server


def serve(host: str, port: int, spool_path: str, token: str | None = None,
          max_body_bytes: int = DEFAULT_MAX_BODY_BYTES) -> None:
    server = make_server(host, port, spool_path, token, max_body_bytes)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
