"""Builtin training kernels.

Each solver exposes the same small surface the pod drives: init, fit/observe,
predict, per-sample losses, input gradients, and state save/load.  All
randomness flows from one SplitMix64 stream per solver so runs with equal
seeds are bit-identical; numpy supplies the numerics, never the RNG.
"""

from __future__ import annotations

import numpy as np

from .rng import SplitMix64, stable_hash64

TASK_CLASSIFY = "classify"
TASK_PREDICT = "predict"
TASK_PRETRAIN = "pretrain"


class SolverError(Exception):
    pass


class TrainingDiverged(SolverError):
    """A loss went non-finite during training."""


class UnsupportedGradient(SolverError):
    """The solver cannot differentiate its output for this configuration."""


class ShapeMismatch(SolverError):
    """Carried weights do not fit the new head configuration."""


def xavier_uniform(rng: SplitMix64, fan_in: int, fan_out: int) -> np.ndarray:
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    w = np.empty((fan_in, fan_out), dtype=np.float64)
    for i in range(fan_in):
        for j in range(fan_out):
            w[i, j] = rng.uniform_in(-limit, limit)
    return w


def _check_finite(loss: float) -> float:
    if not np.isfinite(loss):
        raise TrainingDiverged(f"loss became {loss!r}")
    return float(loss)


# SGD updates clip the global gradient norm so a hot learning rate degrades
# into slow progress instead of NaN weights. Reported gradients (loss_and_grads,
# grad_input) stay exact; only the update rule clips.
CLIP_NORM = 5.0


def _clip_scale(grads: tuple) -> float:
    sq = 0.0
    for g in grads:
        sq += float(np.sum(g * g))
    norm = float(np.sqrt(sq))
    if norm > CLIP_NORM:
        return CLIP_NORM / norm
    return 1.0


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


# -------------------------------------------------------------------- linear


class LinearSolver:
    """Least-squares linear map with a bias column, solved in closed form.

    Classification trains one-vs-all against one-hot targets and predicts
    the argmax; training is a single "epoch" (there is nothing to iterate).
    """

    kind = "linear"
    tasks = (TASK_CLASSIFY, TASK_PREDICT, TASK_PRETRAIN)

    def __init__(self, d_in: int, d_out: int, task: str, hp: dict, seed: int):
        self.d_in = d_in
        self.task = task
        self.k = d_out if task == TASK_CLASSIFY else d_out
        self.w = np.zeros((d_in + 1, self.k), dtype=np.float64)

    def fit_epoch(self, x: np.ndarray, y: np.ndarray, epoch: int) -> float:
        x1 = _with_bias(x)
        t = self._targets(y)
        self.w, *_ = np.linalg.lstsq(x1, t, rcond=None)
        residual = x1 @ self.w - t
        return _check_finite(np.mean(residual * residual))

    def _targets(self, y: np.ndarray) -> np.ndarray:
        if self.task == TASK_CLASSIFY:
            t = np.zeros((len(y), self.k), dtype=np.float64)
            t[np.arange(len(y)), np.asarray(y, dtype=int)] = 1.0
            return t
        t = np.asarray(y, dtype=np.float64)
        return t.reshape(len(t), -1)

    def predict(self, x: np.ndarray):
        out = _with_bias(x) @ self.w
        if self.task == TASK_CLASSIFY:
            return np.argmax(out, axis=1)
        return out[:, 0] if out.shape[1] == 1 else out

    def per_sample_loss(self, x: np.ndarray, y) -> np.ndarray:
        pred = self.predict(x)
        if self.task == TASK_CLASSIFY:
            return (pred != np.asarray(y, dtype=int)).astype(np.float64)
        t = self._targets(y)
        out = _with_bias(x) @ self.w
        return np.mean((out - t) ** 2, axis=1)

    def grad_input(self, x: np.ndarray) -> np.ndarray:
        if self.task == TASK_CLASSIFY or self.k != 1:
            raise UnsupportedGradient("input gradient needs a single scalar output")
        return self.w[:-1, 0].copy()

    def save(self) -> dict:
        return {
            "kind": self.kind,
            "task": self.task,
            "d_in": self.d_in,
            "k": self.k,
            "w": self.w.tolist(),
        }

    def load(self, state: dict) -> None:
        w = np.asarray(state["w"], dtype=np.float64)
        if w.shape != self.w.shape:
            raise ShapeMismatch(f"stored {w.shape}, expected {self.w.shape}")
        self.w = w


def _with_bias(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    return np.concatenate([x, np.ones((len(x), 1))], axis=1)


# ----------------------------------------------------------------------- mlp


class MlpSolver:
    """One hidden tanh layer trained by per-sample SGD.

    Classification uses a softmax head with cross-entropy; everything else
    uses an identity head with squared error.  The epoch shuffle and the
    Xavier init both draw from the solver's own stream, so a (seed, data)
    pair fixes the trajectory exactly.
    """

    kind = "mlp"
    tasks = (TASK_CLASSIFY, TASK_PREDICT, TASK_PRETRAIN)

    def __init__(self, d_in: int, d_out: int, task: str, hp: dict, seed: int):
        self.d_in = d_in
        self.d_out = d_out
        self.task = task
        self.width = int(hp.get("width", 8))
        self.lr = float(hp.get("lr", 0.1))
        self.rng = SplitMix64(seed)
        self.w1 = xavier_uniform(self.rng, d_in, self.width)
        self.b1 = np.zeros(self.width, dtype=np.float64)
        self.w2 = xavier_uniform(self.rng, self.width, d_out)
        self.b2 = np.zeros(d_out, dtype=np.float64)

    # -- forward -------------------------------------------------------

    def _forward(self, x: np.ndarray):
        h = np.tanh(x @ self.w1 + self.b1)
        return h, h @ self.w2 + self.b2

    def _sample_loss(self, out: np.ndarray, target) -> float:
        if self.task == TASK_CLASSIFY:
            p = softmax(out)
            return -float(np.log(max(p[int(target)], 1e-300)))
        t = np.atleast_1d(np.asarray(target, dtype=np.float64))
        d = out - t
        return float(d @ d)

    def _head_grad(self, out: np.ndarray, target) -> np.ndarray:
        if self.task == TASK_CLASSIFY:
            p = softmax(out)
            p[int(target)] -= 1.0
            return p
        t = np.atleast_1d(np.asarray(target, dtype=np.float64))
        return 2.0 * (out - t)

    # -- training ----------------------------------------------------------

    def fit_epoch(self, x: np.ndarray, y, epoch: int) -> float:
        n = len(x)
        order = list(range(n))
        self.rng.shuffle(order)
        total = 0.0
        for i in order:
            total += self._sgd_step(np.asarray(x[i], dtype=np.float64), _index(y, i))
        return _check_finite(total / max(1, n))

    def _sgd_step(self, xi: np.ndarray, yi) -> float:
        h, out = self._forward(xi)
        loss = self._sample_loss(out, yi)
        d_out = self._head_grad(out, yi)
        d_h = (self.w2 @ d_out) * (1.0 - h * h)
        g_w2 = np.outer(h, d_out)
        g_w1 = np.outer(xi, d_h)
        scale = _clip_scale((g_w1, d_h, g_w2, d_out))
        step = self.lr * scale
        self.w2 -= step * g_w2
        self.b2 -= step * d_out
        self.w1 -= step * g_w1
        self.b1 -= step * d_h
        return loss

    def loss_and_grads(self, xi: np.ndarray, yi):
        """Loss plus analytic parameter gradients at one point (no update)."""
        h, out = self._forward(xi)
        loss = self._sample_loss(out, yi)
        d_out = self._head_grad(out, yi)
        d_h = (self.w2 @ d_out) * (1.0 - h * h)
        return loss, {
            "w2": np.outer(h, d_out),
            "b2": d_out.copy(),
            "w1": np.outer(xi, d_h),
            "b1": d_h.copy(),
        }

    # -- inference ------------------------------------------------------------

    def predict(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        h = np.tanh(x @ self.w1 + self.b1)
        out = h @ self.w2 + self.b2
        if self.task == TASK_CLASSIFY:
            return np.argmax(out, axis=1)
        return out[:, 0] if self.d_out == 1 else out

    def per_sample_loss(self, x: np.ndarray, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        losses = np.empty(len(x), dtype=np.float64)
        for i in range(len(x)):
            _, out = self._forward(x[i])
            losses[i] = self._sample_loss(out, _index(y, i))
        return losses

    def grad_input(self, x: np.ndarray) -> np.ndarray:
        if self.d_out != 1:
            raise UnsupportedGradient("input gradient needs a single scalar output")
        x = np.asarray(x, dtype=np.float64)
        h = np.tanh(x @ self.w1 + self.b1)
        return self.w1 @ (self.w2[:, 0] * (1.0 - h * h))

    # -- state ----------------------------------------------------------------

    def save(self) -> dict:
        return {
            "kind": self.kind,
            "task": self.task,
            "d_in": self.d_in,
            "d_out": self.d_out,
            "width": self.width,
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2.tolist(),
        }

    def load(self, state: dict) -> None:
        w1 = np.asarray(state["w1"], dtype=np.float64)
        if w1.shape != (self.d_in, self.width):
            raise ShapeMismatch(f"stored hidden {w1.shape}, expected {(self.d_in, self.width)}")
        self.w1 = w1
        self.b1 = np.asarray(state["b1"], dtype=np.float64)
        w2 = np.asarray(state["w2"], dtype=np.float64)
        if w2.shape != (self.width, self.d_out):
            raise ShapeMismatch(f"stored head {w2.shape}, expected {(self.width, self.d_out)}")
        self.w2 = w2
        self.b2 = np.asarray(state["b2"], dtype=np.float64)

    def carry_hidden(self, state: dict, seed: int) -> None:
        """Adopt a pretrained hidden layer; the head restarts from scratch.

        The stored hidden shape must match exactly: silently re-projecting
        would defeat the point of measuring transfer.
        """
        w1 = np.asarray(state["w1"], dtype=np.float64)
        if w1.shape != (self.d_in, self.width):
            raise ShapeMismatch(
                f"pretrained hidden {w1.shape} does not fit {(self.d_in, self.width)}"
            )
        self.w1 = w1
        self.b1 = np.asarray(state["b1"], dtype=np.float64)
        rng = SplitMix64(seed)
        self.w2 = xavier_uniform(rng, self.width, self.d_out)
        self.b2 = np.zeros(self.d_out, dtype=np.float64)


def _index(y, i):
    return y[i]


# ----------------------------------------------------------------------- knn


class KnnSolver:
    """Lazy memory classifier: majority label of the k nearest neighbors.

    Distance ties resolve to the lower stored index, vote ties to the
    smaller label, so predictions are exact functions of the stored set.
    """

    kind = "knn"
    tasks = (TASK_CLASSIFY,)

    def __init__(self, d_in: int, d_out: int, task: str, hp: dict, seed: int):
        if task != TASK_CLASSIFY:
            raise SolverError("knn only classifies")
        self.k = int(hp.get("k", 1))
        self.x = np.zeros((0, d_in), dtype=np.float64)
        self.y = np.zeros(0, dtype=int)

    def fit_epoch(self, x: np.ndarray, y, epoch: int) -> float:
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=int)
        return 0.0

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.empty(len(x), dtype=int)
        for i in range(len(x)):
            out[i] = self._vote(x[i])
        return out

    def _vote(self, xi: np.ndarray) -> int:
        if len(self.x) == 0:
            return 0
        d = np.sum((self.x - xi) ** 2, axis=1)
        order = np.lexsort((np.arange(len(d)), d))[: self.k]
        votes: dict[int, int] = {}
        for idx in order:
            votes[int(self.y[idx])] = votes.get(int(self.y[idx]), 0) + 1
        best = max(votes.items(), key=lambda kv: (kv[1], -kv[0]))
        return best[0]

    def per_sample_loss(self, x: np.ndarray, y) -> np.ndarray:
        pred = self.predict(x)
        return (pred != np.asarray(y, dtype=int)).astype(np.float64)

    def grad_input(self, x: np.ndarray) -> np.ndarray:
        raise UnsupportedGradient("nearest-neighbor lookup is not differentiable")

    def save(self) -> dict:
        # Lazy memory is its training data; the pod re-feeds it on load
        # rather than duplicating the dataset inside the state blob.
        return {"kind": self.kind, "k": self.k}

    def load(self, state: dict) -> None:
        self.k = int(state["k"])


# ------------------------------------------------------------------ perm sum


def canonical_order(embeds: np.ndarray) -> list:
    """Permutation-invariant visit order for a set of embedding rows.

    Rows sort by (hash of bytes, bytes); equal rows are interchangeable, so
    any permutation of the input yields the exact same float-add sequence.
    """
    keyed = []
    for i in range(len(embeds)):
        b = np.ascontiguousarray(embeds[i]).tobytes()
        keyed.append((stable_hash64(b.hex()), b, i))
    keyed.sort(key=lambda t: (t[0], t[1]))
    return [i for _, _, i in keyed]


class PermSumSolver:
    """Sum-pooled per-element subnet: out = sum_i f(e_i), f a small MLP.

    The sum runs in canonical element order (see canonical_order), so the
    output is bit-identical under any permutation of the input set.
    """

    kind = "perm_sum"
    tasks = (TASK_PREDICT,)

    def __init__(self, d_in: int, d_out: int, task: str, hp: dict, seed: int):
        if d_out != 1:
            raise SolverError("perm_sum pools to a single scalar")
        self.d_in = d_in  # per-element embedding width
        self.width = int(hp.get("width", 8))
        self.lr = float(hp.get("lr", 0.1))
        self.rng = SplitMix64(seed)
        self.w1 = xavier_uniform(self.rng, d_in, self.width)
        self.b1 = np.zeros(self.width, dtype=np.float64)
        self.w2 = xavier_uniform(self.rng, self.width, 1)
        self.b2 = np.zeros(1, dtype=np.float64)

    def forward(self, embeds: np.ndarray) -> float:
        embeds = np.asarray(embeds, dtype=np.float64)
        total = 0.0
        for i in canonical_order(embeds):
            h = np.tanh(embeds[i] @ self.w1 + self.b1)
            total += float(h @ self.w2[:, 0]) + float(self.b2[0])
        return total

    def fit_epoch(self, xs: list, ys, epoch: int) -> float:
        order = list(range(len(xs)))
        self.rng.shuffle(order)
        total = 0.0
        for i in order:
            total += self._sgd_step(np.asarray(xs[i], dtype=np.float64), float(ys[i]))
        return _check_finite(total / max(1, len(xs)))

    def _sgd_step(self, embeds: np.ndarray, target: float) -> float:
        seq = canonical_order(embeds)
        hs = []
        out = 0.0
        for i in seq:
            h = np.tanh(embeds[i] @ self.w1 + self.b1)
            hs.append(h)
            out += float(h @ self.w2[:, 0]) + float(self.b2[0])
        d = out - target
        loss = d * d
        d_out = 2.0 * d
        g_w1 = np.zeros_like(self.w1)
        g_b1 = np.zeros_like(self.b1)
        g_w2 = np.zeros_like(self.w2)
        g_b2 = np.zeros_like(self.b2)
        for h, i in zip(hs, seq):
            d_h = (self.w2[:, 0] * d_out) * (1.0 - h * h)
            g_w2[:, 0] += h * d_out
            g_b2[0] += d_out
            g_w1 += np.outer(embeds[i], d_h)
            g_b1 += d_h
        step = self.lr * _clip_scale((g_w1, g_b1, g_w2, g_b2))
        self.w1 -= step * g_w1
        self.b1 -= step * g_b1
        self.w2 -= step * g_w2
        self.b2 -= step * g_b2
        return loss

    def predict(self, xs: list) -> np.ndarray:
        return np.array([self.forward(np.asarray(x, dtype=np.float64)) for x in xs])

    def per_sample_loss(self, xs: list, ys) -> np.ndarray:
        pred = self.predict(xs)
        t = np.asarray(ys, dtype=np.float64)
        return (pred - t) ** 2

    def grad_input(self, embeds: np.ndarray) -> np.ndarray:
        """d(out)/d(e_i) for every element: shape (n, d_in)."""
        embeds = np.asarray(embeds, dtype=np.float64)
        g = np.empty_like(embeds)
        for i in range(len(embeds)):
            h = np.tanh(embeds[i] @ self.w1 + self.b1)
            g[i] = self.w1 @ (self.w2[:, 0] * (1.0 - h * h))
        return g

    def save(self) -> dict:
        return {
            "kind": self.kind,
            "d_in": self.d_in,
            "width": self.width,
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2.tolist(),
        }

    def load(self, state: dict) -> None:
        self.w1 = np.asarray(state["w1"], dtype=np.float64)
        self.b1 = np.asarray(state["b1"], dtype=np.float64)
        self.w2 = np.asarray(state["w2"], dtype=np.float64)
        self.b2 = np.asarray(state["b2"], dtype=np.float64)


BUILTIN_SOLVERS = {
    "linear": LinearSolver,
    "mlp": MlpSolver,
    "knn": KnnSolver,
    "perm_sum": PermSumSolver,
}


def make_solver(kind: str, d_in: int, d_out: int, task: str, hp: dict, seed: int):
    cls = BUILTIN_SOLVERS.get(kind)
    if cls is None:
        raise SolverError(f"unknown solver kind {kind!r}")
    return cls(d_in, d_out, task, hp, seed)
