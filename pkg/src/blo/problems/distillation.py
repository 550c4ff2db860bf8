"""Synthetic data-condensation problem (performance matching).

The meta parameter phi is a small learned dataset: ipc condensed points per
class, labels fixed one per class. The inner loop trains a classifier on the
condensed set by full-batch gradient descent; the outer objective is the
cross-entropy of the trained classifier on the original dataset, so f has no
explicit phi dependence (c_T = 0) and all the signal flows through the
unrolled inner training.

Second-order oracles are forward-mode dual-number propagation through the
hand-written inner-loss gradient (forward-over-reverse): every jvp below
mirrors the primal gradient code line by line, carrying (value, tangent)
pairs. A finite-difference-of-gradients fallback for validating them lives
in tests via problems.base.fd_transition_jvp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument
from .base import BilevelProblem

_MODELS = ("softmax_linear", "one_hidden")


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(labels.size), labels]
    return float(np.mean(logz - picked))


@dataclass(frozen=True, eq=False)
class DistillationProblem(BilevelProblem):
    train_x: np.ndarray          # (n_o, D) original dataset
    train_y: np.ndarray          # (n_o,)
    classes: int
    ipc: int                     # condensed points per class
    eta: float                   # inner step size
    model: str = "softmax_linear"
    hidden: int = 16             # width when model == "one_hidden"
    theta0: np.ndarray | None = None

    labels_c: np.ndarray = field(init=False)   # fixed condensed labels

    def __post_init__(self):
        if self.model not in _MODELS:
            raise InvalidArgument(f"model must be one of {_MODELS}")
        if self.ipc < 1 or self.classes < 2:
            raise InvalidArgument("need ipc >= 1 and classes >= 2")
        if not self.eta > 0:
            raise InvalidArgument("eta must be positive")
        object.__setattr__(self, "train_x", np.asarray(self.train_x, dtype=np.float64))
        object.__setattr__(self, "train_y", np.asarray(self.train_y, dtype=np.int64))
        object.__setattr__(self, "labels_c", np.repeat(np.arange(self.classes), self.ipc))
        if self.theta0 is None:
            gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(0)))
            object.__setattr__(self, "theta0", 0.01 * gen.standard_normal(self.n_inner))
        else:
            theta0 = np.asarray(self.theta0, dtype=np.float64)
            if theta0.shape != (self.n_inner,):
                raise InvalidArgument("theta0 has the wrong length for this model")
            object.__setattr__(self, "theta0", theta0)

    # ---- dimensions and packing ----

    @property
    def features(self) -> int:
        return self.train_x.shape[1]

    @property
    def n_condensed(self) -> int:
        return self.classes * self.ipc

    @property
    def n_meta(self) -> int:
        return self.n_condensed * self.features

    @property
    def n_inner(self) -> int:
        d, c, h = self.features, self.classes, self.hidden
        if self.model == "softmax_linear":
            return c * d + c
        return h * d + h + c * h + c

    def condensed_x(self, phi: np.ndarray) -> np.ndarray:
        return np.asarray(phi, dtype=np.float64).reshape(self.n_condensed, self.features)

    def _unpack(self, theta: np.ndarray):
        d, c, h = self.features, self.classes, self.hidden
        if self.model == "softmax_linear":
            w = theta[: c * d].reshape(c, d)
            bias = theta[c * d :]
            return w, bias
        i = 0
        w1 = theta[i : i + h * d].reshape(h, d); i += h * d
        b1 = theta[i : i + h]; i += h
        w2 = theta[i : i + c * h].reshape(c, h); i += c * h
        b2 = theta[i :]
        return w1, b1, w2, b2

    # ---- forward passes ----

    def logits(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        if self.model == "softmax_linear":
            w, bias = self._unpack(theta)
            return x @ w.T + bias
        w1, b1, w2, b2 = self._unpack(theta)
        a1 = np.tanh(x @ w1.T + b1)
        return a1 @ w2.T + b2

    def accuracy(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.logits(theta, x).argmax(axis=1) == y))

    # ---- hand-written inner-loss gradients ----

    def _grad_theta(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        onehot = np.eye(self.classes)[y]
        if self.model == "softmax_linear":
            w, bias = self._unpack(theta)
            g = (_softmax_rows(x @ w.T + bias) - onehot) / n
            return np.concatenate([(g.T @ x).ravel(), g.sum(axis=0)])
        w1, b1, w2, b2 = self._unpack(theta)
        a1 = np.tanh(x @ w1.T + b1)
        g = (_softmax_rows(a1 @ w2.T + b2) - onehot) / n
        d1 = (g @ w2) * (1.0 - a1 * a1)
        return np.concatenate([(d1.T @ x).ravel(), d1.sum(axis=0), (g.T @ a1).ravel(), g.sum(axis=0)])

    def _grad_theta_jvp(
        self, theta: np.ndarray, x: np.ndarray, y: np.ndarray, dtheta: np.ndarray, dx: np.ndarray
    ) -> np.ndarray:
        """Directional derivative of _grad_theta along (dtheta, dx)."""
        n = x.shape[0]
        onehot = np.eye(self.classes)[y]
        if self.model == "softmax_linear":
            w, bias = self._unpack(theta)
            dw, dbias = self._unpack(dtheta)
            logits = x @ w.T + bias
            p = _softmax_rows(logits)
            g = (p - onehot) / n
            dlogits = dx @ w.T + x @ dw.T + dbias
            dp = p * (dlogits - (p * dlogits).sum(axis=1, keepdims=True))
            dg = dp / n
            return np.concatenate([(dg.T @ x + g.T @ dx).ravel(), dg.sum(axis=0)])
        w1, b1, w2, b2 = self._unpack(theta)
        dw1, db1, dw2, db2 = self._unpack(dtheta)
        z1 = x @ w1.T + b1
        a1 = np.tanh(z1)
        da1 = (1.0 - a1 * a1) * (dx @ w1.T + x @ dw1.T + db1)
        logits = a1 @ w2.T + b2
        p = _softmax_rows(logits)
        g = (p - onehot) / n
        dlogits = da1 @ w2.T + a1 @ dw2.T + db2
        dp = p * (dlogits - (p * dlogits).sum(axis=1, keepdims=True))
        dg = dp / n
        gw2_back = g @ w2
        d1 = gw2_back * (1.0 - a1 * a1)
        dd1 = (dg @ w2 + g @ dw2) * (1.0 - a1 * a1) + gw2_back * (-2.0 * a1 * da1)
        return np.concatenate(
            [
                (dd1.T @ x + d1.T @ dx).ravel(),
                dd1.sum(axis=0),
                (dg.T @ a1 + g.T @ da1).ravel(),
                dg.sum(axis=0),
            ]
        )

    def _grad_x_jvp(self, theta: np.ndarray, x: np.ndarray, y: np.ndarray, dtheta: np.ndarray) -> np.ndarray:
        """Directional derivative of grad-wrt-inputs along dtheta (dx = 0)."""
        n = x.shape[0]
        onehot = np.eye(self.classes)[y]
        if self.model == "softmax_linear":
            w, bias = self._unpack(theta)
            dw, dbias = self._unpack(dtheta)
            p = _softmax_rows(x @ w.T + bias)
            g = (p - onehot) / n
            dlogits = x @ dw.T + dbias
            dp = p * (dlogits - (p * dlogits).sum(axis=1, keepdims=True))
            dg = dp / n
            return dg @ w + g @ dw
        w1, b1, w2, b2 = self._unpack(theta)
        dw1, db1, dw2, db2 = self._unpack(dtheta)
        a1 = np.tanh(x @ w1.T + b1)
        da1 = (1.0 - a1 * a1) * (x @ dw1.T + db1)
        p = _softmax_rows(a1 @ w2.T + b2)
        g = (p - onehot) / n
        dlogits = da1 @ w2.T + a1 @ dw2.T + db2
        dp = p * (dlogits - (p * dlogits).sum(axis=1, keepdims=True))
        dg = dp / n
        gw2_back = g @ w2
        d1 = gw2_back * (1.0 - a1 * a1)
        dd1 = (dg @ w2 + g @ dw2) * (1.0 - a1 * a1) + gw2_back * (-2.0 * a1 * da1)
        return dd1 @ w1 + d1 @ dw1

    # ---- BilevelProblem contract ----

    def meta_loss(self, theta, phi) -> float:
        return _cross_entropy(self.logits(theta, self.train_x), self.train_y)

    def inner_init(self, phi):
        return self.theta0.copy()

    def transition(self, theta, phi, t, seed):
        # Full condensed batch: deterministic, seed accepted but unused.
        return theta - self.eta * self._grad_theta(theta, self.condensed_x(phi), self.labels_c)

    def partial_f_theta(self, theta, phi):
        return self._grad_theta(theta, self.train_x, self.train_y)

    def partial_f_phi(self, theta, phi):
        return np.zeros(self.n_meta)

    def init_jvp(self, phi, v):
        return np.zeros(self.n_inner)

    def transition_jvp(self, theta, phi, t, seed, y, v):
        xc = self.condensed_x(phi)
        dx = np.asarray(v, dtype=np.float64).reshape(xc.shape)
        return y - self.eta * self._grad_theta_jvp(theta, xc, self.labels_c, y, dx)

    def transition_vjp(self, theta, phi, t, seed, d):
        d_a = d - self.eta * self.g_hvp(theta, phi, d)
        d_b = -self.eta * self.g_cross_vjp(theta, phi, d)
        return d_a, d_b

    def g_hvp(self, theta, phi, u):
        xc = self.condensed_x(phi)
        return self._grad_theta_jvp(theta, xc, self.labels_c, u, np.zeros_like(xc))

    def g_cross_vjp(self, theta, phi, r):
        # Mixed partials are symmetric: r d2g/dtheta dphi equals the
        # theta-directional derivative of the gradient w.r.t. the inputs.
        return self._grad_x_jvp(theta, self.condensed_x(phi), self.labels_c, r).ravel()

    def initial_phi(self, seed: int) -> np.ndarray:
        """Condensed set initialized from random original images of the matching class."""
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        rows = []
        for c in range(self.classes):
            pool = np.flatnonzero(self.train_y == c)
            rows.extend(gen.choice(pool, size=self.ipc, replace=False))
        return self.train_x[np.asarray(rows)].ravel().copy()

    # ---- construction ----

    @staticmethod
    def synthetic(
        classes: int = 4,
        features: int = 8,
        ipc: int = 1,
        n_per_class: int = 100,
        eta: float = 0.5,
        model: str = "softmax_linear",
        hidden: int = 16,
        class_sep: float = 2.0,
        noise: float = 1.0,
        data_seed: int = 0,
        init_seed: int = 1,
    ) -> "DistillationProblem":
        """Gaussian-mixture classification data generated from a seed."""
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(data_seed)))
        means = gen.standard_normal((classes, features))
        means *= class_sep / np.linalg.norm(means, axis=1, keepdims=True)
        y = np.repeat(np.arange(classes), n_per_class)
        x = means[y] + noise * gen.standard_normal((y.size, features))
        perm = gen.permutation(y.size)
        x, y = x[perm], y[perm]
        d = features
        m = classes * d + classes if model == "softmax_linear" else hidden * d + hidden + classes * hidden + classes
        init_gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(init_seed)))
        theta0 = 0.01 * init_gen.standard_normal(m)
        return DistillationProblem(
            train_x=x, train_y=y, classes=classes, ipc=ipc, eta=eta,
            model=model, hidden=hidden, theta0=theta0,
        )
