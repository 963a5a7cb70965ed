"""HTTP chat service over the shared ChatEngine.

UTF-8 JSON bodies over HTTP/1.1, versioned with a "v" field. Endpoints:

    GET    /v1/health                      -> {"v":1,"status":"ok","modes":[...]}
    POST   /v1/sessions                    {"mode", "knowledge"?, "goal"?, "seed"?}
    GET    /v1/sessions/<id>               -> transcript + mode
    POST   /v1/sessions/<id>/messages      {"text"} -> reply + debug payload
    DELETE /v1/sessions/<id>
    GET    /  and /static/<file>           console bundle, when present

Unknown session ids answer 404; malformed bodies answer 400 with the
offending field named. The model and database are read-only at serve time;
inference runs under one lock, so concurrent sessions are safe.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .chat import ChatEngine, SessionStore

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
}


class ApiError(Exception):
    def __init__(self, status, message, field=None):
        super().__init__(message)
        self.status = status
        self.payload = {"v": 1, "error": message}
        if field:
            self.payload["field"] = field


class ChatServer:
    def __init__(self, engine, host="127.0.0.1", port=0, static_dir=None, session_ttl=3600.0):
        self.engine = engine
        self.store = SessionStore(ttl_seconds=session_ttl)
        self.static_dir = Path(static_dir) if static_dir else None
        self.inference_lock = threading.Lock()
        handler = _make_handler(self)
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.host, self.port = self.httpd.server_address[:2]
        self._thread = None

    def serve_forever(self):
        self.httpd.serve_forever()

    def start_background(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def shutdown(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    # -- request handlers -------------------------------------------------

    def handle_health(self):
        return 200, {"v": 1, "status": "ok", "modes": self.engine.modes()}

    def handle_create_session(self, body):
        mode = body.get("mode")
        if mode not in self.engine.modes():
            raise ApiError(400, f"mode must be one of {self.engine.modes()}", field="mode")
        knowledge = body.get("knowledge", [])
        if not isinstance(knowledge, list) or not all(isinstance(k, str) for k in knowledge):
            raise ApiError(400, "knowledge must be a list of strings", field="knowledge")
        seed = body.get("seed", 0)
        if not isinstance(seed, int):
            raise ApiError(400, "seed must be an integer", field="seed")
        goal = body.get("goal")
        session = self.store.create(mode, seed=seed, knowledge=knowledge, goal=goal)
        return 200, {"v": 1, "session_id": session.session_id, "mode": mode}

    def _session(self, session_id):
        try:
            return self.store.get(session_id)
        except KeyError:
            raise ApiError(404, f"unknown session {session_id!r}") from None

    def handle_get_session(self, session_id):
        session = self._session(session_id)
        return 200, {
            "v": 1,
            "session_id": session.session_id,
            "mode": session.mode,
            "history": session.transcript(),
        }

    def handle_message(self, session_id, body):
        session = self._session(session_id)
        text = body.get("text")
        if not isinstance(text, str) or not text.strip():
            raise ApiError(400, "text must be a non-empty string", field="text")
        with self.inference_lock:
            reply, payload = self.engine.respond(session, text.strip())
        out = {"v": 1, "reply": reply, "history_len": len(session.history)}
        out.update(payload)
        return 200, out

    def handle_close(self, session_id):
        try:
            self.store.close(session_id)
        except KeyError:
            raise ApiError(404, f"unknown session {session_id!r}") from None
        return 200, {"v": 1, "closed": True}

    def static_file(self, name):
        if self.static_dir is None:
            raise ApiError(404, "no console bundle installed")
        target = (self.static_dir / name).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) or not target.is_file():
            raise ApiError(404, f"no such file {name!r}")
        return target


def _make_handler(server):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def _send_json(self, status, payload):
            raw = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def _read_body(self):
            length = int(self.headers.get("Content-Length", 0) or 0)
            raw = self.rfile.read(length) if length else b""
            if not raw:
                return {}
            try:
                body = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise ApiError(400, f"body is not valid JSON: {e}") from None
            if not isinstance(body, dict):
                raise ApiError(400, "body must be a JSON object")
            return body

        def _route(self, method):
            parts = [p for p in self.path.split("?")[0].split("/") if p]
            try:
                if method == "GET" and parts == ["v1", "health"]:
                    return self._send_json(*server.handle_health())
                if method == "POST" and parts == ["v1", "sessions"]:
                    return self._send_json(*server.handle_create_session(self._read_body()))
                if method == "GET" and len(parts) == 3 and parts[:2] == ["v1", "sessions"]:
                    return self._send_json(*server.handle_get_session(parts[2]))
                if (
                    method == "POST"
                    and len(parts) == 4
                    and parts[:2] == ["v1", "sessions"]
                    and parts[3] == "messages"
                ):
                    return self._send_json(*server.handle_message(parts[2], self._read_body()))
                if method == "DELETE" and len(parts) == 3 and parts[:2] == ["v1", "sessions"]:
                    return self._send_json(*server.handle_close(parts[2]))
                if method == "GET" and (not parts or parts[0] == "static"):
                    name = "index.html" if not parts else "/".join(parts[1:])
                    target = server.static_file(name or "index.html")
                    raw = target.read_bytes()
                    self.send_response(200)
                    ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
                    self.send_header("Content-Type", ctype)
                    self.send_header("Content-Length", str(len(raw)))
                    self.end_headers()
                    self.wfile.write(raw)
                    return
                raise ApiError(404, f"no route for {method} {self.path}")
            except ApiError as err:
                self._send_json(err.status, err.payload)
            except Exception as err:  # surface unexpected failures as 500s
                self._send_json(500, {"v": 1, "error": f"internal error: {err}"})

        def do_GET(self):
            self._route("GET")

        def do_POST(self):
            self._route("POST")

        def do_DELETE(self):
            self._route("DELETE")

    return Handler


def serve(artifacts_dir, host="127.0.0.1", port=8414, static_dir=None):
    """Load bundles and run the chat service until interrupted."""
    from .chat import load_bundles

    engine = ChatEngine(load_bundles(artifacts_dir))
    server = ChatServer(engine, host=host, port=port, static_dir=static_dir)
    print(f"serving modes {engine.modes()} on http://{server.host}:{server.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return server
