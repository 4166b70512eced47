"""Learnable node-scoring policies.

A pairwise ranker (two-layer feedforward net, leaky-ReLU hidden layer) picks
which frontier node to expand; an optional linear pruner rejects children
before they are enqueued.  Gradients are written out by hand and checked
against finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

LEAKY_SLOPE = 0.01
MODEL_HEADER = "retrosearch-model v1"


class TrainingDivergedError(FloatingPointError):
    pass


class ModelFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# query-based normalisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalizationContext:
    lo: np.ndarray
    hi: np.ndarray


def normalize_query(batch: np.ndarray) -> tuple[np.ndarray, NormalizationContext]:
    """Map every feature column of ``batch`` affinely onto [-1, 1].

    Columns with zero range map to 0.
    """
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0.0, span, 1.0)
    out = np.where(span > 0.0, 2.0 * (x - lo) / safe - 1.0, 0.0)
    return out, NormalizationContext(lo, hi)


# ---------------------------------------------------------------------------
# ranker
# ---------------------------------------------------------------------------


@dataclass
class RankerParams:
    W1: np.ndarray  # (hidden, dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float = 0.0
    schema_id: str = ""

    @property
    def dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def copy(self) -> "RankerParams":
        return RankerParams(self.W1.copy(), self.b1.copy(), self.w2.copy(), float(self.b2), self.schema_id)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.w2, [self.b2]])

    def with_flat(self, v: np.ndarray) -> "RankerParams":
        h, d = self.W1.shape
        i = h * d
        return RankerParams(
            v[:i].reshape(h, d).copy(), v[i : i + h].copy(), v[i + h : i + 2 * h].copy(), float(v[-1]), self.schema_id
        )


def init_ranker(dim: int, hidden: int = 32, seed: int = 0, schema_id: str = "") -> RankerParams:
    rng = np.random.default_rng(seed)
    W1 = rng.normal(0.0, np.sqrt(2.0 / dim), size=(hidden, dim))
    w2 = rng.normal(0.0, np.sqrt(1.0 / hidden), size=hidden)
    return RankerParams(W1, np.zeros(hidden), w2, 0.0, schema_id)


def _leaky(h):
    return np.where(h > 0.0, h, LEAKY_SLOPE * h)


def _forward(params: RankerParams, X: np.ndarray):
    H = X @ params.W1.T + params.b1
    A = _leaky(H)
    return A @ params.w2 + params.b2, H, A


def score(params: RankerParams, x) -> np.ndarray | float:
    """Ranker output for one feature vector (float) or a batch (array)."""
    X = np.asarray(x, dtype=float)
    if X.shape[-1] != params.dim:
        raise ValueError(f"feature dimension {X.shape[-1]} != ranker input dimension {params.dim}")
    if X.ndim == 1:
        return float(_forward(params, X[None, :])[0][0])
    return _forward(params, X)[0]


def _pair_loss_grad(params: RankerParams, P: np.ndarray, N: np.ndarray):
    sp, Hp, Ap = _forward(params, P)
    sn, Hn, An = _forward(params, N)
    diff = sp - sn
    losses = np.logaddexp(0.0, -diff)
    m = P.shape[0]
    g = -expit(-diff) / m  # d mean-loss / d sp; d/d sn is -g
    dAp = np.outer(g, params.w2)
    dAn = np.outer(-g, params.w2)
    dHp = dAp * np.where(Hp > 0.0, 1.0, LEAKY_SLOPE)
    dHn = dAn * np.where(Hn > 0.0, 1.0, LEAKY_SLOPE)
    grad = RankerParams(
        W1=dHp.T @ P + dHn.T @ N,
        b1=dHp.sum(axis=0) + dHn.sum(axis=0),
        w2=Ap.T @ g - An.T @ g,
        b2=0.0,
        schema_id=params.schema_id,
    )
    return float(losses.mean()), grad


def pairwise_loss_and_grad(params: RankerParams, preferred, negative):
    """RankNet loss ``log(1 + exp(-(s(preferred) - s(negative))))`` and its gradient.

    Accepts single vectors or equally sized batches (mean over pairs).
    """
    P = np.atleast_2d(np.asarray(preferred, dtype=float))
    N = np.atleast_2d(np.asarray(negative, dtype=float))
    if P.shape != N.shape:
        raise ValueError("preferred and negative batches differ in shape")
    return _pair_loss_grad(params, P, N)


@dataclass(frozen=True)
class LearnerConfig:
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    hidden: int = 32


@dataclass
class TrainResult:
    params: RankerParams
    losses: list[float]
    best_epoch: int


def _check_finite(loss, epoch):
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss!r} at epoch {epoch}")


def train_ranker(params: RankerParams, P: np.ndarray, N: np.ndarray, learner: LearnerConfig) -> TrainResult:
    """Minibatch SGD on (preferred, negative) pair arrays.

    The returned parameters are those of the epoch with the lowest full-data
    loss (epoch 0 being the input), so the final loss never exceeds the
    initial one.
    """
    if P.shape[0] == 0:
        raise ValueError("cannot train on an empty pair set")
    rng = np.random.default_rng(learner.seed)
    cur = params.copy()
    loss0, _ = _pair_loss_grad(cur, P, N)
    _check_finite(loss0, 0)
    losses = [loss0]
    best, best_loss, best_epoch = cur.copy(), loss0, 0
    m = P.shape[0]
    lr = learner.learning_rate
    bs = max(1, learner.batch_size)
    for epoch in range(1, learner.epochs + 1):
        order = rng.permutation(m)
        for start in range(0, m, bs):
            idx = order[start : start + bs]
            _, g = _pair_loss_grad(cur, P[idx], N[idx])
            cur.W1 -= lr * g.W1
            cur.b1 -= lr * g.b1
            cur.w2 -= lr * g.w2
        loss, _ = _pair_loss_grad(cur, P, N)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite loss at epoch {epoch} (lr={lr}, pairs={m}, "
                f"max|W1|={np.abs(cur.W1).max():.3g})"
            )
        losses.append(loss)
        if loss < best_loss:
            best, best_loss, best_epoch = cur.copy(), loss, epoch
    return TrainResult(best, losses, best_epoch)


# ---------------------------------------------------------------------------
# pruner
# ---------------------------------------------------------------------------


@dataclass
class PrunerParams:
    w: np.ndarray
    b: float = 0.0
    w_opt: float = 5.0
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None
    schema_id: str = ""

    def __post_init__(self):
        if self.w_opt < 1.0:
            raise ValueError("w_opt must be >= 1")
        d = self.w.shape[0]
        if self.shift is None:
            self.shift = np.zeros(d)
        if self.scale is None:
            self.scale = np.ones(d)

    def copy(self) -> "PrunerParams":
        return replace(self, w=self.w.copy(), shift=self.shift.copy(), scale=self.scale.copy())

    def standardize(self, X):
        return (np.atleast_2d(np.asarray(X, dtype=float)) - self.shift) / self.scale


def keep_probability(params: PrunerParams, X) -> np.ndarray:
    return expit(params.standardize(X) @ params.w + params.b)


def prune(params: PrunerParams, x) -> np.ndarray | bool:
    """True where the node should be rejected (keep probability below 0.5)."""
    p = keep_probability(params, x) < 0.5
    return bool(p[0]) if np.ndim(x) == 1 else p


def weighted_logistic_loss_and_grad(params: PrunerParams, X, y):
    """Class-weighted logistic loss; keep-labelled rows (y=1) weigh ``w_opt``."""
    Z = params.standardize(X)
    y = np.asarray(y, dtype=float)
    z = Z @ params.w + params.b
    wts = np.where(y > 0.5, params.w_opt, 1.0)
    # -y log s(z) - (1-y) log(1-s(z)) in overflow-safe form
    per = y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)
    n = Z.shape[0]
    loss = float((wts * per).sum() / n)
    dz = wts * (expit(z) - y) / n
    return loss, Z.T @ dz, float(dz.sum())


def train_pruner(X, y, w_opt: float = 5.0, learner: LearnerConfig = LearnerConfig(), schema_id: str = ""):
    """SGD on the weighted logistic loss; returns ``(params, losses)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("cannot train on an empty pruner set")
    shift = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    params = PrunerParams(np.zeros(X.shape[1]), 0.0, w_opt, shift, scale, schema_id)
    rng = np.random.default_rng(learner.seed)
    loss, _, _ = weighted_logistic_loss_and_grad(params, X, y)
    losses = [loss]
    best, best_loss = params.copy(), loss
    bs = max(1, learner.batch_size)
    for epoch in range(1, learner.epochs + 1):
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], bs):
            idx = order[start : start + bs]
            _, gw, gb = weighted_logistic_loss_and_grad(params, X[idx], y[idx])
            params.w -= learner.learning_rate * gw
            params.b -= learner.learning_rate * gb
        loss, _, _ = weighted_logistic_loss_and_grad(params, X, y)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite pruner loss at epoch {epoch}")
        losses.append(loss)
        if loss < best_loss:
            best, best_loss = params.copy(), loss
    return best, losses


# ---------------------------------------------------------------------------
# policy objects used by the search
# ---------------------------------------------------------------------------


@dataclass
class RankerPolicy:
    params: RankerParams
    normalize: bool = True
    pruner: PrunerParams | None = None
    tag: str = "ranker"

    @property
    def query_normalized(self) -> bool:
        return self.normalize

    def score(self, F: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(F)
        if self.normalize:
            X = normalize_query(X)[0]
        return _forward(self.params, X)[0]

    @property
    def prune(self):
        if self.pruner is None:
            return None
        return lambda F: prune(self.pruner, np.atleast_2d(F))


@dataclass
class MixturePolicy:
    """Geometric mixture of policies; one component is drawn per roll-out."""

    components: list
    weights: np.ndarray
    tag: str = "mixture"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.components) != self.weights.size or self.weights.size == 0:
            raise ValueError("need one weight per component")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be non-negative and sum to 1")

    def resolve(self, rng: np.random.Generator):
        u = rng.random()
        idx = int(np.searchsorted(np.cumsum(self.weights), u, side="right"))
        chosen = self.components[min(idx, len(self.components) - 1)]
        inner = getattr(chosen, "resolve", None)
        return inner(rng) if inner is not None else chosen


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def _tensor_lines(name: str, arr) -> list[str]:
    a = np.atleast_1d(np.asarray(arr, dtype=float))
    shape = " ".join(map(str, a.shape))
    lines = [f"tensor {name} {shape}"]
    if a.ndim == 2:
        lines += [_fmt(row) for row in a]
    else:
        lines.append(_fmt(a))
    return lines


def _policy_lines(policy) -> list[str]:
    if isinstance(policy, MixturePolicy):
        lines = ["kind mixture", f"tag {policy.tag}", f"components {len(policy.components)}",
                 "weights " + _fmt(policy.weights)]
        for comp in policy.components:
            lines += _policy_lines(comp)
        return lines
    if not isinstance(policy, RankerPolicy):
        raise TypeError(f"cannot serialise policy of type {type(policy).__name__}")
    p = policy.params
    lines = [
        "kind ranker",
        f"tag {policy.tag}",
        f"schema_id {p.schema_id or '-'}",
        f"normalize {int(policy.normalize)}",
        f"leaky_slope {LEAKY_SLOPE!r}",
    ]
    lines += _tensor_lines("W1", p.W1) + _tensor_lines("b1", p.b1) + _tensor_lines("w2", p.w2)
    lines += _tensor_lines("b2", [p.b2])
    if policy.pruner is None:
        lines.append("pruner none")
    else:
        q = policy.pruner
        lines.append(f"pruner linear {q.w_opt!r}")
        lines += _tensor_lines("w", q.w) + _tensor_lines("b", [q.b])
        lines += _tensor_lines("shift", q.shift) + _tensor_lines("scale", q.scale)
    return lines


def policy_to_text(policy) -> str:
    return "\n".join([MODEL_HEADER] + _policy_lines(policy)) + "\n"


class _Lines:
    def __init__(self, lines: Sequence[str]):
        self.lines = [ln for ln in lines if ln.strip()]
        self.i = 0

    def next(self) -> str:
        if self.i >= len(self.lines):
            raise ModelFormatError("unexpected end of model file")
        ln = self.lines[self.i]
        self.i += 1
        return ln

    def field(self, key: str) -> str:
        k, _, v = self.next().partition(" ")
        if k != key:
            raise ModelFormatError(f"expected {key!r}, found {k!r}")
        return v

    def tensor(self, name: str) -> np.ndarray:
        parts = self.field("tensor").split()
        if parts[0] != name:
            raise ModelFormatError(f"expected tensor {name}, found {parts[0]}")
        shape = tuple(int(s) for s in parts[1:])
        rows = shape[0] if len(shape) == 2 else 1
        vals = []
        for _ in range(rows):
            vals += [float(v) for v in self.next().split()]
        arr = np.asarray(vals, dtype=float)
        if arr.size != int(np.prod(shape)):
            raise ModelFormatError(f"tensor {name} has {arr.size} values, shape {shape}")
        return arr.reshape(shape)


def _read_policy(r: _Lines):
    kind = r.field("kind")
    tag = r.field("tag")
    if kind == "mixture":
        n = int(r.field("components"))
        weights = np.asarray([float(v) for v in r.field("weights").split()])
        comps = [_read_policy(r) for _ in range(n)]
        return MixturePolicy(comps, weights, tag)
    if kind != "ranker":
        raise ModelFormatError(f"unknown policy kind {kind!r}")
    schema = r.field("schema_id")
    normalize = bool(int(r.field("normalize")))
    slope = float(r.field("leaky_slope"))
    if slope != LEAKY_SLOPE:
        raise ModelFormatError(f"unsupported leaky slope {slope}")
    W1, b1, w2, b2 = r.tensor("W1"), r.tensor("b1"), r.tensor("w2"), r.tensor("b2")
    params = RankerParams(W1, b1, w2, float(b2[0]), "" if schema == "-" else schema)
    pr = r.field("pruner").split()
    pruner = None
    if pr[0] == "linear":
        w, b = r.tensor("w"), r.tensor("b")
        shift, scale = r.tensor("shift"), r.tensor("scale")
        pruner = PrunerParams(w, float(b[0]), float(pr[1]), shift, scale, params.schema_id)
    return RankerPolicy(params, normalize, pruner, tag)


def policy_from_text(text: str):
    lines = text.splitlines()
    if not lines or lines[0].strip() != MODEL_HEADER:
        raise ModelFormatError("missing model header")
    return _read_policy(_Lines(lines[1:]))


def save_policy(policy, path) -> None:
    with open(path, "w") as fh:
        fh.write(policy_to_text(policy))


def load_policy(path):
    with open(path) as fh:
        return policy_from_text(fh.read())
