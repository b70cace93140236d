#!/usr/bin/env python3
"""Reference benchmark solver served over newline-delimited JSON on stdio.

Each request is one JSON object per line with its kind in field "t"; each
gets exactly one reply line (except "bye", which ends the process).  The
solver side: ridge regression for "predict" (closed form, Gaussian
elimination) and softmax logistic regression for "classify" (plain SGD).
Standard library only, so the file runs wherever an interpreter exists.

Nothing but protocol lines may be written to stdout.
"""

from __future__ import annotations

import base64
import json
import math
import random
import sys

PROTOCOL_VERSION = 1
TASKS = ("classify", "predict")


# -------------------------------------------------------- tiny linear algebra


def solve(a: list, b: list) -> list:
    """Solve a x = b by Gaussian elimination with partial pivoting."""
    n = len(a)
    m = [row[:] + [b[i]] for i, row in enumerate(a)]
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(m[r][col]))
        if abs(m[pivot][col]) < 1e-12:
            raise ValueError("singular system")
        m[col], m[pivot] = m[pivot], m[col]
        for r in range(col + 1, n):
            f = m[r][col] / m[col][col]
            for c in range(col, n + 1):
                m[r][c] -= f * m[col][c]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        s = m[r][n] - sum(m[r][c] * x[c] for c in range(r + 1, n))
        x[r] = s / m[r][r]
    return x


def with_bias(row: list) -> list:
    return list(row) + [1.0]


# --------------------------------------------------------------------- models


class RidgeModel:
    """Least squares with an optional l2 penalty on the non-bias weights."""

    def __init__(self, d_in: int, hp: dict, seed: int):
        self.d_in = d_in
        self.l2 = float(hp.get("l2", 0.0))
        self.w = [0.0] * (d_in + 1)

    def train(self, x: list, y: list) -> float:
        n = self.d_in + 1
        xs = [with_bias(row) for row in x]
        a = [[sum(r[i] * r[j] for r in xs) for j in range(n)] for i in range(n)]
        for i in range(self.d_in):  # bias stays unpenalized
            a[i][i] += self.l2
        b = [sum(r[i] * yi for r, yi in zip(xs, y)) for i in range(n)]
        self.w = solve(a, b)
        residual = [self.value(row) - yi for row, yi in zip(x, y)]
        return sum(r * r for r in residual) / len(residual)

    def value(self, row: list) -> float:
        return sum(w * v for w, v in zip(self.w, with_bias(row)))

    def predict(self, x: list) -> list:
        return [self.value(row) for row in x]

    def grad(self, row: list) -> list:
        return self.w[: self.d_in]

    def state(self) -> dict:
        return {"w": self.w}

    def restore(self, state: dict) -> None:
        self.w = [float(v) for v in state["w"]]


class LogisticModel:
    """Multinomial logistic regression trained one SGD epoch per request."""

    def __init__(self, d_in: int, k: int, hp: dict, seed: int):
        self.d_in = d_in
        self.k = max(2, k)
        self.lr = float(hp.get("lr", 0.1))
        self.l2 = float(hp.get("l2", 0.0))
        self.rng = random.Random(seed)
        self.w = [[0.0] * self.k for _ in range(d_in + 1)]

    def logits(self, row: list) -> list:
        xb = with_bias(row)
        return [
            sum(self.w[i][c] * xb[i] for i in range(self.d_in + 1))
            for c in range(self.k)
        ]

    def _softmax(self, z: list) -> list:
        top = max(z)
        e = [math.exp(v - top) for v in z]
        s = sum(e)
        return [v / s for v in e]

    def train(self, x: list, y: list) -> float:
        order = list(range(len(x)))
        self.rng.shuffle(order)
        total = 0.0
        for i in order:
            xb = with_bias(x[i])
            p = self._softmax(self.logits(x[i]))
            total += -math.log(max(p[int(y[i])], 1e-12))
            for c in range(self.k):
                err = p[c] - (1.0 if c == int(y[i]) else 0.0)
                for j in range(self.d_in + 1):
                    g = err * xb[j]
                    if j < self.d_in:
                        g += self.l2 * self.w[j][c]
                    self.w[j][c] -= self.lr * g
        return total / len(x)

    def predict(self, x: list) -> list:
        out = []
        for row in x:
            z = self.logits(row)
            out.append(max(range(self.k), key=lambda c: (z[c], -c)))
        return out

    def grad(self, row: list) -> list:
        # Gradient of the winning class's logit with respect to the input.
        z = self.logits(row)
        c = max(range(self.k), key=lambda i: (z[i], -i))
        return [self.w[j][c] for j in range(self.d_in)]

    def state(self) -> dict:
        return {"w": self.w}

    def restore(self, state: dict) -> None:
        self.w = [[float(v) for v in row] for row in state["w"]]


# ------------------------------------------------------------------- protocol


class Session:
    """Dispatches one protocol message to one reply dict."""

    def __init__(self):
        self.task = None
        self.hp = {}
        self.seed = 0
        self.d_in = 0
        self.d_out = 0
        self.model = None

    def handle(self, msg: dict) -> dict:
        kind = msg.get("t")
        handler = getattr(self, f"on_{kind}", None)
        if handler is None:
            return {"t": "fail", "reason": f"unknown message {kind!r}"}
        try:
            return handler(msg)
        except Exception as e:  # any defect becomes a protocol-level failure
            return {"t": "fail", "reason": str(e)}

    def on_hello(self, msg: dict) -> dict:
        if int(msg.get("v", 0)) != PROTOCOL_VERSION:
            return {"t": "fail", "reason": f"unsupported version {msg.get('v')!r}"}
        return {
            "t": "meta",
            "v": PROTOCOL_VERSION,
            "tasks": list(TASKS),
            "in": -1,
            "out": -1,
            "grad": True,
        }

    def on_init(self, msg: dict) -> dict:
        task = msg.get("task")
        if task not in TASKS:
            return {"t": "fail", "reason": f"unsupported task {task!r}"}
        self.task = task
        self.hp = dict(msg.get("hp", {}))
        self.seed = int(msg.get("seed", 0))
        self.d_in = int(msg["d_in"])
        self.d_out = int(msg["d_out"])
        if task == "predict":
            self.model = RidgeModel(self.d_in, self.hp, self.seed)
        else:
            self.model = LogisticModel(self.d_in, self.d_out, self.hp, self.seed)
        return {"t": "ok"}

    def _require_model(self):
        if self.model is None:
            raise ValueError("init required first")
        return self.model

    def on_train(self, msg: dict) -> dict:
        loss = self._require_model().train(msg["x"], msg["y"])
        return {"t": "loss", "v": loss}

    def on_predict(self, msg: dict) -> dict:
        return {"t": "pred", "y": self._require_model().predict(msg["x"])}

    def on_grad(self, msg: dict) -> dict:
        if msg.get("wrt", "input") != "input":
            return {"t": "fail", "reason": f"cannot differentiate wrt {msg['wrt']!r}"}
        return {"t": "grad", "g": self._require_model().grad(msg["x"])}

    def on_save(self, msg: dict) -> dict:
        payload = {
            "task": self.task,
            "hp": self.hp,
            "seed": self.seed,
            "d_in": self.d_in,
            "d_out": self.d_out,
            "model": self._require_model().state(),
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return {"t": "state", "b64": base64.b64encode(blob.encode()).decode()}

    def on_load(self, msg: dict) -> dict:
        payload = json.loads(base64.b64decode(msg["b64"]))
        if payload["task"] != self.task:
            return {"t": "fail", "reason": "state is for a different task"}
        self._require_model().restore(payload["model"])
        return {"t": "ok"}


def serve(stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    session = Session()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            reply = {"t": "fail", "reason": "request is not valid JSON"}
        else:
            if isinstance(msg, dict) and msg.get("t") == "bye":
                return 0
            reply = session.handle(msg if isinstance(msg, dict) else {})
        stdout.write(json.dumps(reply, sort_keys=True, separators=(",", ":")))
        stdout.write("\n")
        stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(serve())
