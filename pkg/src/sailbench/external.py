"""Host side of the external-solver wire protocol.

A plugin is any executable that speaks newline-delimited JSON on stdio.
Every message is one line, one object, with its kind in field "t":

    host -> plugin                     plugin -> host
    {"t":"hello","v":1}                {"t":"meta","tasks":[...],"in":N,"out":N,"grad":B}
    {"t":"init","task":..,"hp":{},     {"t":"ok"}
     "seed":N,"d_in":N,"d_out":N}
    {"t":"train","x":[[..]],"y":[..]}  {"t":"loss","v":F}
    {"t":"predict","x":[[..]]}         {"t":"pred","y":[..]}
    {"t":"grad","wrt":"input","x":[..]}{"t":"grad","g":[..]}
    {"t":"save"}                       {"t":"state","b64":".."}
    {"t":"load","b64":".."}            {"t":"ok"}
    {"t":"bye"}                        (exit 0)

A plugin may answer any request with {"t":"fail","reason":...}, which aborts
the session.  Replies must arrive within the per-message timeout.
"""

from __future__ import annotations

import json
import os
import queue
import subprocess
import threading

import numpy as np

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 30.0
PLUGIN_PATH_VAR = "SAIBENCH_PLUGIN_PATH"


class ProtocolError(Exception):
    pass


class Timeout(ProtocolError):
    """The plugin did not answer within the per-message deadline."""


class HandshakeRejected(ProtocolError):
    """The plugin's hello reply was missing, malformed, or a refusal."""


class PluginNotFound(ProtocolError):
    pass


def resolve_plugin(name: str) -> list:
    """Find a plugin executable by name on the plugin path.

    The path variable holds os.pathsep-separated entries.  A file entry
    matches when its basename (extension aside) equals the requested name;
    a directory entry is searched for such a file, PATH-style.
    """
    raw = os.environ.get(PLUGIN_PATH_VAR, "")
    for entry in filter(None, raw.split(os.pathsep)):
        if os.path.isdir(entry):
            for base in sorted(os.listdir(entry)):
                path = os.path.join(entry, base)
                if _stem(base) == name and os.path.isfile(path):
                    return _command_for(path)
            continue
        base = os.path.basename(entry)
        if _stem(base) == name or base == name:
            return _command_for(entry)
    raise PluginNotFound(
        f"no plugin named {name!r} on {PLUGIN_PATH_VAR} ({raw!r})"
    )


def _stem(base: str) -> str:
    return base.rsplit(".", 1)[0] if "." in base else base


def _command_for(entry: str) -> list:
    if entry.endswith(".js") or entry.endswith(".mjs"):
        return ["node", entry]
    if entry.endswith(".py"):
        import sys

        return [sys.executable, entry]
    return [entry]


class WireClient:
    """One live plugin process plus a line-framed request/reply channel."""

    def __init__(self, cmd: list, timeout: float = DEFAULT_TIMEOUT):
        self.cmd = list(cmd)
        self.timeout = timeout
        self.transcript: list = []  # ("send"|"recv", dict)
        try:
            self.proc = subprocess.Popen(
                self.cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                encoding="utf-8",
            )
        except OSError as e:
            raise ProtocolError(f"cannot start plugin {self.cmd}: {e}")
        self._lines: "queue.Queue" = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        try:
            for line in self.proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(None)  # EOF marker

    def request(self, message: dict) -> dict:
        self.send(message)
        return self.recv()

    def send(self, message: dict) -> None:
        if self.proc.poll() is not None:
            raise ProtocolError("plugin process has exited")
        line = json.dumps(message, separators=(",", ":"), sort_keys=True)
        self.transcript.append(("send", message))
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise ProtocolError(f"plugin pipe closed: {e}")

    def recv(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self.close(kill=True)
            raise Timeout(f"no reply within {self.timeout}s")
        if line is None:
            raise ProtocolError("plugin closed its output stream")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"bad JSON from plugin: {e}: {line!r}")
        if not isinstance(obj, dict) or "t" not in obj:
            raise ProtocolError(f"plugin reply has no 't' field: {obj!r}")
        self.transcript.append(("recv", obj))
        if obj["t"] == "fail":
            raise ProtocolError(f"plugin failed: {obj.get('reason', 'unspecified')}")
        return obj

    def close(self, kill: bool = False) -> int | None:
        if self.proc.poll() is None:
            if not kill:
                try:
                    self.send({"t": "bye"})
                except ProtocolError:
                    pass
            try:
                self.proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        if self.proc.stdin:
            self.proc.stdin.close()
        return self.proc.returncode


class ExternalSolver:
    """Solver facade over a wire plugin; same surface as the builtins."""

    kind = "external"

    def __init__(self, cmd: list, d_in: int, d_out: int, task: str, hp: dict,
                 seed: int, timeout: float = DEFAULT_TIMEOUT):
        self.task = task
        self.d_out = d_out
        self.client = WireClient(cmd, timeout=timeout)
        meta = self.client.request({"t": "hello", "v": PROTOCOL_VERSION})
        if meta.get("t") != "meta":
            raise HandshakeRejected(f"expected meta, got {meta!r}")
        self.meta = meta
        if task not in meta.get("tasks", []):
            self.client.close()
            raise HandshakeRejected(f"plugin does not support task {task!r}")
        self.can_grad = bool(meta.get("grad", False))
        reply = self.client.request(
            {
                "t": "init",
                "task": task,
                "hp": _jsonable(hp),
                "seed": int(seed),
                "d_in": int(d_in),
                "d_out": int(d_out),
            }
        )
        if reply.get("t") != "ok":
            raise ProtocolError(f"init not acknowledged: {reply!r}")

    def fit_epoch(self, x, y, epoch: int) -> float:
        reply = self.client.request(
            {"t": "train", "x": _matrix(x), "y": _vector(y, self.task)}
        )
        if reply.get("t") != "loss":
            raise ProtocolError(f"expected loss, got {reply!r}")
        return float(reply["v"])

    def predict(self, x) -> np.ndarray:
        reply = self.client.request({"t": "predict", "x": _matrix(x)})
        if reply.get("t") != "pred":
            raise ProtocolError(f"expected pred, got {reply!r}")
        y = np.asarray(reply["y"], dtype=np.float64)
        if self.task == "classify":
            return y.astype(int)
        return y

    def per_sample_loss(self, x, y) -> np.ndarray:
        pred = self.predict(x)
        if self.task == "classify":
            return (pred != np.asarray(y, dtype=int)).astype(np.float64)
        t = np.asarray(y, dtype=np.float64)
        return (np.asarray(pred, dtype=np.float64) - t) ** 2

    def grad_input(self, x) -> np.ndarray:
        from .solvers import UnsupportedGradient

        if not self.can_grad:
            raise UnsupportedGradient("plugin declared grad: false")
        reply = self.client.request(
            {"t": "grad", "wrt": "input", "x": _vector_raw(x)}
        )
        if reply.get("t") != "grad":
            raise ProtocolError(f"expected grad, got {reply!r}")
        return np.asarray(reply["g"], dtype=np.float64)

    def save(self) -> dict:
        reply = self.client.request({"t": "save"})
        if reply.get("t") != "state":
            raise ProtocolError(f"expected state, got {reply!r}")
        return {"kind": self.kind, "b64": reply["b64"]}

    def load(self, state: dict) -> None:
        reply = self.client.request({"t": "load", "b64": state["b64"]})
        if reply.get("t") != "ok":
            raise ProtocolError(f"load not acknowledged: {reply!r}")

    def close(self) -> None:
        self.client.close()


def _matrix(x) -> list:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return [[float(v) for v in row] for row in arr]


def _vector(y, task: str) -> list:
    if task == "classify":
        return [int(v) for v in np.asarray(y).reshape(-1)]
    return [float(v) for v in np.asarray(y, dtype=np.float64).reshape(-1)]


def _vector_raw(x) -> list:
    return [float(v) for v in np.asarray(x, dtype=np.float64).reshape(-1)]


def _jsonable(hp: dict) -> dict:
    out = {}
    for k, v in hp.items():
        if isinstance(v, (bool, int, float, str)):
            out[k] = v
        else:
            out[k] = float(v)
    return out
