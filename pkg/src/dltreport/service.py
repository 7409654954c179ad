"""Regulator-facing pull service (HTTP + JSON, read-only).

Endpoints::

    GET /head
    GET /reports/{template_id}?scope_level=LOCAL|NATIONAL|SUPRANATIONAL&scope_key=..&as_of=N|LATEST
    GET /records?scope_level=..&scope_key=..&as_of=..
    GET /audit                      (operator token only)

Requests authenticate with ``Authorization: Bearer <token>``. Every request,
including rejected ones, appends exactly one audit entry before the response
is produced.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import asdict, dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Mapping
from urllib.parse import parse_qs, urlsplit

from .errors import DLTReportError
from .scope import Level, Scope
from .warehouse import Role, Warehouse, authorize

log = logging.getLogger(__name__)

STATUS_BY_CODE = {
    "UNKNOWN_TOKEN": 401,
    "UNAUTHORIZED_SCOPE": 403,
    "UNKNOWN_TEMPLATE": 404,
    "UNKNOWN_SCOPE": 404,
    "NOT_FOUND": 404,
    "METHOD_NOT_ALLOWED": 405,
    "BAD_REQUEST": 400,
    "HEIGHT_BEYOND_HEAD": 422,
}


class PullError(DLTReportError):
    @property
    def status(self) -> int:
        return STATUS_BY_CODE.get(self.code, 500)


@dataclass(frozen=True)
class AuditEntry:
    sequence: int
    wall_time: float
    role_id: str
    query: str
    outcome: str  # OK, DENIED, ERROR
    status: int


def load_tokens(path) -> dict[str, Role]:
    """Token file: a JSON object mapping bearer token to a role description."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return {tok: Role.from_dict(spec) for tok, spec in doc.items()}


def _dumps(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


class PullService:
    def __init__(self, warehouse: Warehouse, tokens: Mapping[str, Role],
                 clock: Callable[[], float] = time.time):
        self.warehouse = warehouse
        self.tokens = dict(tokens)
        self.clock = clock
        self._audit: list[AuditEntry] = []
        self._audit_lock = threading.Lock()

    # -- pieces ------------------------------------------------------------------

    def authenticate(self, token: str | None) -> Role:
        if not token or token not in self.tokens:
            raise PullError("UNKNOWN_TOKEN", "missing or unknown bearer token")
        return self.tokens[token]

    def head(self) -> int:
        return self.warehouse.head

    @property
    def audit_log(self) -> list[AuditEntry]:
        with self._audit_lock:
            return list(self._audit)

    def _record(self, role_id: str, query: str, status: int) -> None:
        outcome = "OK" if status == 200 else ("DENIED" if status in (401, 403) else "ERROR")
        with self._audit_lock:
            self._audit.append(AuditEntry(len(self._audit), self.clock(), role_id, query, outcome, status))

    @staticmethod
    def _scope(params: dict) -> Scope:
        level = params.get("scope_level", "SUPRANATIONAL")
        key = params.get("scope_key") or None
        try:
            return Scope(Level(level), key)
        except ValueError as exc:
            raise PullError("BAD_REQUEST", str(exc)) from None

    def _as_of(self, params: dict) -> int:
        raw = params.get("as_of", "LATEST")
        if raw == "LATEST":
            head = self.warehouse.head
            if head < 0:
                raise PullError("HEIGHT_BEYOND_HEAD", "nothing has been processed yet")
            return head
        try:
            return int(raw)
        except ValueError:
            raise PullError("BAD_REQUEST", f"as_of must be an integer or LATEST, got {raw!r}") from None

    # -- dispatch ----------------------------------------------------------------

    def handle(self, method: str, target: str, token: str | None) -> tuple[int, bytes]:
        """Serve one request; returns (HTTP status, JSON body)."""
        role_id = "anonymous"
        try:
            role = self.authenticate(token)
            role_id = role.role_id
            status, body = self._dispatch(method, target, role)
        except PullError as exc:
            status, body = exc.status, {"error": exc.code, "message": exc.message}
        except DLTReportError as exc:
            status = STATUS_BY_CODE.get(exc.code, 500)
            body = {"error": exc.code, "message": exc.message}
        self._record(role_id, f"{method} {target}", status)
        return status, _dumps(body)

    def _dispatch(self, method: str, target: str, role: Role) -> tuple[int, dict]:
        if method != "GET":
            raise PullError("METHOD_NOT_ALLOWED", method)
        parts = urlsplit(target)
        path = parts.path.rstrip("/") or "/"
        params = {k: v[-1] for k, v in parse_qs(parts.query, keep_blank_values=True).items()}
        wh = self.warehouse

        if path == "/head":
            return 200, {"head": wh.head, "as_of_height": wh.head, "template_version": None}

        if path == "/audit":
            if not authorize(role, "audit", None, wh.registry):
                raise PullError("UNAUTHORIZED_SCOPE", "audit log is operator-only")
            entries = [asdict(e) for e in self.audit_log]
            return 200, {"entries": entries, "as_of_height": wh.head, "template_version": None}

        if path == "/records":
            scope = self._scope(params)
            if not authorize(role, "records", scope, wh.registry):
                raise PullError("UNAUTHORIZED_SCOPE", f"{role.role_id} may not read records of {scope}")
            as_of = self._as_of(params)
            rows = wh.query_records(scope, as_of, role)
            return 200, {"as_of_height": as_of, "template_version": None, "scope": scope.to_dict(),
                         "records": rows}

        if path.startswith("/reports/") and path.count("/") == 2:
            template_id = path.split("/")[2]
            scope = self._scope(params)
            if not authorize(role, "reports", scope, wh.registry):
                raise PullError("UNAUTHORIZED_SCOPE", f"{role.role_id} may not pull {scope}")
            template = wh.template(template_id)
            as_of = self._as_of(params)
            inst = wh.aggregate_report(template, scope, as_of)
            return 200, {"as_of_height": as_of, "template_version": template.version,
                         "report": inst.to_dict()}

        raise PullError("NOT_FOUND", path)


# -- HTTP binding ---------------------------------------------------------------


def _make_handler(service: PullService):
    class Handler(BaseHTTPRequestHandler):
        server_version = "dltreport-pull/0.1"

        def _serve(self):
            auth = self.headers.get("Authorization", "")
            token = auth[7:].strip() if auth.startswith("Bearer ") else None
            status, body = service.handle(self.command, self.path, token)
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        do_GET = _serve
        do_POST = _serve
        do_PUT = _serve
        do_DELETE = _serve

        def log_message(self, fmt, *args):
            log.info("%s - %s", self.address_string(), fmt % args)

    return Handler


def make_server(service: PullService, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _make_handler(service))
    server.daemon_threads = True
    return server


def parse_listen(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return (host or "127.0.0.1"), int(port)
