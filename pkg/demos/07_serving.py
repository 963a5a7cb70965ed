"""Serving trained checkpoints over HTTP and talking to them like a client.

Builds micro checkpoints (seconds), starts the service in-process, then
walks the versioned JSON API: health, session creation, a few turns with
the candidate debug payload, and a task turn with its trace.
"""

import json
import tempfile
import urllib.request
from pathlib import Path

from parlance.chat import ChatEngine, load_bundles
from parlance.server import ChatServer

import sys

sys.path.insert(0, str(Path(__file__).parent.parent / "frontend" / "scripts"))
from make_smoke_artifacts import build  # noqa: E402

workdir = Path(tempfile.mkdtemp(prefix="parlance-demo-"))
artifacts = workdir / "artifacts"
print("building micro checkpoints under", artifacts)
build(artifacts)

engine = ChatEngine(load_bundles(artifacts))
server = ChatServer(engine, port=0).start_background()
base = f"http://{server.host}:{server.port}"
print("serving on", base)


def call(method, path, body=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(base + path, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read().decode())


print("\nGET /v1/health ->", call("GET", "/v1/health"))

session = call("POST", "/v1/sessions", {"mode": "open", "seed": 1})
sid = session["session_id"]
print("created session", sid)

reply = call("POST", f"/v1/sessions/{sid}/messages", {"text": "do you enjoy jazz ?"})
print("\nbot reply:", reply["reply"])
print("candidate payload (z, coherence, text):")
for c in reply["candidates"]:
    marker = "*" if c["selected"] else " "
    print(f" {marker} z={c['z']} coh={c['coherence']:.4f} {c['text']!r}")

task = call("POST", "/v1/sessions", {"mode": "task", "seed": 2})
turn = call("POST", f"/v1/sessions/{task['session_id']}/messages",
            {"text": "i am looking for a hotel in the north"})
print("\ntask reply:", turn["reply"])
print("trace:", turn["trace"])

history = call("GET", f"/v1/sessions/{sid}")
print("\ntranscript replayed from the server:", [h["text"] for h in history["history"]])

server.shutdown()
print("\nserver stopped")
