"""Quality prediction from query embeddings.

The main predictor is a bank of small MLP heads, one per (model, budget
level): three ReLU hidden layers of sizes 256/128/64 and a logistic output,
so predictions always land in (0, 1). Heads train independently on their
cell's (embedding, quality) pairs by minimizing mean squared error with the
Adam update rule; each head owns a dedicated random stream derived from the
master seed and its cell index, which makes training bit-reproducible and
order-independent.

Two reactive baselines share the same per-cell layout: k-nearest-neighbor
averaging and ridge-regularized linear regression.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import expit

from .core import BudgetGrid, Dataset, ModelSpec, Query

HIDDEN_DIMS = (256, 128, 64)
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_FORMAT = "rrmodel/1"

# logistic outputs are clipped into the open interval so saturated heads
# still satisfy "prediction strictly inside (0, 1)"
_P_MIN = np.nextafter(0.0, 1.0)
_P_MAX = np.nextafter(1.0, 0.0)


class EmptyCellError(ValueError):
    """A (model, budget) cell has no training samples."""


class TrainingDivergedError(RuntimeError):
    """A head's loss became non-finite during training."""


class UnknownCellError(KeyError):
    """No predictor exists for the requested (model, budget) cell."""


class SingularSystemError(ValueError):
    """The (unridged) normal equations are singular; retry with ridge > 0."""


@dataclass(frozen=True)
class TrainConfig:
    """Head-training hyperparameters; defaults follow the reference setup."""

    epochs: int = 100
    learning_rate: float = 1e-4
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.learning_rate <= 0 or self.batch_size <= 0:
            raise ValueError("epochs must be >= 0, learning_rate and batch_size positive")


@dataclass(frozen=True, eq=False)
class MlpHead:
    """Parameters of one quality head; immutable once built."""

    weights: tuple[np.ndarray, ...]  # (d,256), (256,128), (128,64), (64,1)
    biases: tuple[np.ndarray, ...]   # (256,), (128,), (64,), (1,)

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=np.float64) for w in self.weights))
        object.__setattr__(self, "biases", tuple(np.asarray(b, dtype=np.float64) for b in self.biases))
        for arr in (*self.weights, *self.biases):
            if not np.all(np.isfinite(arr)):
                raise ValueError("head parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]


def _layer_dims(input_dim: int) -> list[tuple[int, int]]:
    dims = (input_dim, *HIDDEN_DIMS, 1)
    return list(zip(dims[:-1], dims[1:]))


def init_head(input_dim: int, rng: np.random.Generator) -> MlpHead:
    """Glorot-uniform weights, zero biases, drawn from ``rng`` in layer order."""
    weights, biases = [], []
    for fan_in, fan_out in _layer_dims(input_dim):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpHead(weights=tuple(weights), biases=tuple(biases))


def _forward(weights, biases, X: np.ndarray):
    """Forward pass on a batch; returns hidden activations, preactivations, outputs."""
    acts = [X]
    pres = []
    a = X
    for W, b in zip(weights[:-1], biases[:-1]):
        z = a @ W + b
        pres.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    z_out = a @ weights[-1] + biases[-1]
    p = np.clip(expit(z_out[:, 0]), _P_MIN, _P_MAX)
    return acts, pres, p


def predict_batch(head: MlpHead, X: np.ndarray) -> np.ndarray:
    """Head outputs for a batch of embeddings, each strictly in (0, 1)."""
    return _forward(head.weights, head.biases, np.asarray(X, dtype=np.float64))[2]


def _backward(weights, acts, pres, p, targets):
    """Gradients of mean squared error over the batch, parameter-shaped."""
    batch = p.shape[0]
    d_out = (2.0 / batch) * (p - targets) * p * (1.0 - p)  # (B,)
    dz = d_out[:, None]
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    grads_w[-1] = acts[-1].T @ dz
    grads_b[-1] = dz.sum(axis=0)
    da = dz @ weights[-1].T
    for layer in range(len(weights) - 2, -1, -1):
        dz = da * (pres[layer] > 0.0)
        grads_w[layer] = acts[layer].T @ dz
        grads_b[layer] = dz.sum(axis=0)
        if layer > 0:
            da = dz @ weights[layer].T
    return grads_w, grads_b


def mlp_gradient(head: MlpHead, x: np.ndarray, target: float):
    """Exact gradient of (prediction - target)^2 for one input.

    Returns (weight_grads, bias_grads) with the same shapes as the head's
    parameters.
    """
    X = np.asarray(x, dtype=np.float64)[None, :]
    acts, pres, p = _forward(head.weights, head.biases, X)
    gw, gb = _backward(head.weights, acts, pres, p, np.asarray([target], dtype=np.float64))
    return tuple(gw), tuple(gb)


def train_head(
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    label: str = "head",
) -> tuple[MlpHead, list[float], float]:
    """Train one head with Adam on MSE.

    Returns (head, per-epoch mean minibatch loss, final full-set MSE).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise EmptyCellError(f"no training samples for {label}")

    head = init_head(X.shape[1], rng)
    weights = [w.copy() for w in head.weights]
    biases = [b.copy() for b in head.biases]
    params = weights + biases
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]

    t = 0
    epoch_losses: list[float] = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            acts, pres, p = _forward(weights, biases, X[idx])
            residual = p - y[idx]
            loss = float(np.mean(residual * residual))
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"{label}: non-finite training loss")
            batch_losses.append(loss)
            gw, gb = _backward(weights, acts, pres, p, y[idx])
            t += 1
            bc1 = 1.0 - ADAM_BETA1**t
            bc2 = 1.0 - ADAM_BETA2**t
            for pi, grad in enumerate(gw + gb):
                m_state[pi] = ADAM_BETA1 * m_state[pi] + (1.0 - ADAM_BETA1) * grad
                v_state[pi] = ADAM_BETA2 * v_state[pi] + (1.0 - ADAM_BETA2) * grad * grad
                step = cfg.learning_rate * (m_state[pi] / bc1) / (np.sqrt(v_state[pi] / bc2) + ADAM_EPS)
                params[pi] -= step
        epoch_losses.append(float(np.mean(batch_losses)))

    trained = MlpHead(weights=tuple(weights), biases=tuple(biases))
    final_pred = predict_batch(trained, X)
    final_mse = float(np.mean((final_pred - y) ** 2))
    if not np.isfinite(final_mse):
        raise TrainingDivergedError(f"{label}: non-finite final MSE")
    return trained, epoch_losses, final_mse


@dataclass(frozen=True, eq=False)
class RouterModel:
    """A trained predictor bank: one head per (model, budget level).

    Immutable and safe to share; the constructor stacks all head parameters
    into contiguous tensors so a full-bank prediction for one query is a few
    batched matmuls.
    """

    pool: tuple[ModelSpec, ...]
    grid: BudgetGrid
    embedding_dim: int
    heads: dict[tuple[str, int], MlpHead]
    training_meta: dict

    def __post_init__(self) -> None:
        object.__setattr__(self, "pool", tuple(self.pool))
        levels = self.grid.levels
        cells = [(m.model_id, b) for m in self.pool for b in levels]
        missing = [c for c in cells if c not in self.heads]
        extra = [c for c in self.heads if c not in set(cells)]
        if missing or extra:
            raise ValueError(f"head bank mismatch: missing={missing[:4]} extra={extra[:4]}")

        n_layers = len(HIDDEN_DIMS) + 1
        stacked_w = [np.stack([self.heads[c].weights[l] for c in cells]) for l in range(n_layers)]
        stacked_b = [np.stack([self.heads[c].biases[l] for c in cells]) for l in range(n_layers)]
        # first layer flattened to (d, C*h1): one GEMV evaluates it for every
        # head at once, the hot path for per-request latency
        n_cells = len(cells)
        first_flat = np.ascontiguousarray(stacked_w[0].transpose(1, 0, 2).reshape(self.embedding_dim, -1))
        stacked_w[0] = first_flat.reshape(self.embedding_dim, n_cells, HIDDEN_DIMS[0]).transpose(1, 0, 2)
        for arr in (first_flat, *stacked_w, *stacked_b):
            arr.setflags(write=False)
        # rebuild heads as views into the stacks so single-head and bank
        # predictions read the same memory
        views = {
            c: MlpHead(
                weights=tuple(stacked_w[l][i] for l in range(n_layers)),
                biases=tuple(stacked_b[l][i] for l in range(n_layers)),
            )
            for i, c in enumerate(cells)
        }
        if views and next(iter(views.values())).input_dim != self.embedding_dim:
            raise ValueError("head input dimension does not match embedding_dim")
        object.__setattr__(self, "heads", views)
        object.__setattr__(self, "_cells", tuple(cells))
        object.__setattr__(self, "_first_flat", first_flat)
        object.__setattr__(self, "_stacked_w", tuple(stacked_w))
        object.__setattr__(self, "_stacked_b", tuple(stacked_b))
        object.__setattr__(self, "_cost_cache", {})

    @property
    def levels(self) -> tuple[int, ...]:
        return self.grid.levels

    @property
    def model_ids(self) -> tuple[str, ...]:
        return tuple(m.model_id for m in self.pool)


def _check_embedding(rm: RouterModel, embedding: np.ndarray) -> np.ndarray:
    emb = np.asarray(embedding, dtype=np.float64)
    if emb.ndim != 1 or emb.shape[0] != rm.embedding_dim:
        raise ValueError(
            f"dimension mismatch: model expects {rm.embedding_dim} components, got {emb.shape}"
        )
    return emb


def embedding_of(q: "Query | np.ndarray") -> np.ndarray:
    return q.embedding if isinstance(q, Query) else np.asarray(q, dtype=np.float64)


def predict_quality(rm: RouterModel, q: Query | np.ndarray, model_id: str, anchor: int) -> float:
    """One head's prediction for one query; strictly inside (0, 1)."""
    head = rm.heads.get((model_id, anchor))
    if head is None:
        raise UnknownCellError(f"no head for ({model_id}, {anchor})")
    emb = _check_embedding(rm, embedding_of(q))
    return float(predict_batch(head, emb[None, :])[0])


def predict_bank(rm: RouterModel, q: Query | np.ndarray) -> np.ndarray:
    """All head predictions for one query as a (models, levels) array.

    Rows follow pool order, columns follow ``rm.levels``. One flattened GEMV
    covers every head's first layer; the deeper layers batch per head.
    """
    emb = _check_embedding(rm, embedding_of(q))
    w = rm._stacked_w
    b = rm._stacked_b
    n_cells = b[0].shape[0]
    a = (emb @ rm._first_flat).reshape(n_cells, HIDDEN_DIMS[0]) + b[0]
    np.maximum(a, 0.0, out=a)
    for l in range(1, len(w) - 1):
        a = np.einsum("ci,cij->cj", a, w[l]) + b[l]
        np.maximum(a, 0.0, out=a)
    z = np.einsum("ci,cio->co", a, w[-1])[:, 0] + b[-1][:, 0]
    p = np.clip(expit(z), _P_MIN, _P_MAX)
    return p.reshape(len(rm.pool), len(rm.levels))


def _cell_arrays(train: Dataset) -> dict[tuple[str, int], tuple[np.ndarray, np.ndarray]]:
    """Per-(model, level) embedding matrix and quality vector, in sample order."""
    emb_by_qid = {q.query_id: q.embedding for q in train.queries}
    grouped: dict[tuple[str, int], tuple[list, list]] = {}
    for s in train.samples:
        xs, ys = grouped.setdefault((s.model_id, s.budget), ([], []))
        xs.append(emb_by_qid[s.query_id])
        ys.append(s.quality)
    return {
        cell: (np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64))
        for cell, (xs, ys) in grouped.items()
    }


def train_mlp_bank(train: Dataset, cfg: TrainConfig | None = None) -> RouterModel:
    """Train the full head bank on a dataset.

    Every (model, level) cell must have at least one sample. Each head draws
    from its own stream seeded by (cfg.seed, cell index), so results do not
    depend on training order.
    """
    cfg = cfg or TrainConfig()
    cells = _cell_arrays(train)
    levels = train.grid.levels

    heads: dict[tuple[str, int], MlpHead] = {}
    final_mse: dict[str, float] = {}
    index = 0
    for m in train.pool:
        for b in levels:
            key = (m.model_id, b)
            if key not in cells:
                raise EmptyCellError(f"no training samples for head ({m.model_id}, {b})")
            X, y = cells[key]
            rng = np.random.default_rng([cfg.seed, index])
            head, _, mse = train_head(X, y, cfg, rng, label=f"head ({m.model_id}, {b})")
            heads[key] = head
            final_mse[f"{m.model_id}|{b}"] = mse
            index += 1

    meta = {
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "final_train_mse": final_mse,
    }
    return RouterModel(
        pool=train.pool,
        grid=train.grid,
        embedding_dim=train.embedding_dim,
        heads=heads,
        training_meta=meta,
    )


def retrain_head(rm: RouterModel, train: Dataset, model_id: str, anchor: int, cfg: TrainConfig | None = None) -> RouterModel:
    """Retrain a single cell, leaving every other head untouched."""
    cfg = cfg or TrainConfig()
    cells = _cell_arrays(train)
    if (model_id, anchor) not in cells:
        raise EmptyCellError(f"no training samples for head ({model_id}, {anchor})")
    levels = rm.grid.levels
    index = [ (m.model_id, b) for m in rm.pool for b in levels ].index((model_id, anchor))
    rng = np.random.default_rng([cfg.seed, index])
    X, y = cells[(model_id, anchor)]
    head, _, mse = train_head(X, y, cfg, rng, label=f"head ({model_id}, {anchor})")
    heads = dict(rm.heads)
    heads[(model_id, anchor)] = head
    meta = dict(rm.training_meta)
    meta["final_train_mse"] = {**meta.get("final_train_mse", {}), f"{model_id}|{anchor}": mse}
    return RouterModel(rm.pool, rm.grid, rm.embedding_dim, heads, meta)


# --- checkpoint format ``rrmodel/1`` -------------------------------------

def _head_bytes(head: MlpHead) -> bytes:
    parts = []
    for w, b in zip(head.weights, head.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def _head_from_bytes(data: bytes, input_dim: int) -> MlpHead:
    flat = np.frombuffer(data, dtype="<f8").astype(np.float64)
    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in _layer_dims(input_dim):
        w = flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = flat[offset : offset + fan_out]
        offset += fan_out
        weights.append(w)
        biases.append(b)
    if offset != flat.size:
        raise ValueError("checkpoint head has unexpected parameter count")
    return MlpHead(weights=tuple(weights), biases=tuple(biases))


def save_checkpoint(rm: RouterModel, path: str | Path) -> None:
    """Write the model as a single versioned JSON file (deterministic bytes)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "embedding_dim": rm.embedding_dim,
        "pool": [
            {
                "model_id": m.model_id,
                "display_name": m.display_name,
                "input_price_per_1m": m.input_price,
                "output_price_per_1m": m.output_price,
            }
            for m in rm.pool
        ],
        "grid": {"anchors": list(rm.grid.anchors), "default_cap": rm.grid.default_cap},
        "training_meta": rm.training_meta,
        "heads": [
            {
                "model_id": model_id,
                "anchor": anchor,
                "shapes": [list(w.shape) for w in rm.heads[(model_id, anchor)].weights],
                "data": base64.b64encode(_head_bytes(rm.heads[(model_id, anchor)])).decode("ascii"),
            }
            for (model_id, anchor) in rm._cells
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8", newline="\n")


def load_checkpoint(path: str | Path) -> RouterModel:
    p = Path(path)
    doc = json.loads(p.read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{p}: unsupported checkpoint format {doc.get('format')!r}")
    pool = tuple(
        ModelSpec(
            model_id=e["model_id"],
            display_name=e.get("display_name", ""),
            input_price=e["input_price_per_1m"],
            output_price=e["output_price_per_1m"],
        )
        for e in doc["pool"]
    )
    grid = BudgetGrid(anchors=tuple(doc["grid"]["anchors"]), default_cap=doc["grid"]["default_cap"])
    dim = int(doc["embedding_dim"])
    heads = {
        (e["model_id"], int(e["anchor"])): _head_from_bytes(base64.b64decode(e["data"]), dim)
        for e in doc["heads"]
    }
    return RouterModel(pool=pool, grid=grid, embedding_dim=dim, heads=heads, training_meta=doc["training_meta"])


# --- reactive baselines ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class KnnPredictor:
    """Per-cell nearest-neighbor quality averaging (Euclidean distance)."""

    k: int
    bank: dict[tuple[str, int], tuple[np.ndarray, np.ndarray]]

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be positive")
        for cell, (X, y) in self.bank.items():
            if self.k > X.shape[0]:
                raise ValueError(f"k={self.k} exceeds bank size {X.shape[0]} for cell {cell}")


def knn_fit(train: Dataset, k: int = 5) -> KnnPredictor:
    return KnnPredictor(k=k, bank=_cell_arrays(train))


def knn_predict(p: KnnPredictor, q: Query | np.ndarray, model_id: str, anchor: int) -> float:
    """Mean quality of the k nearest cell entries; distance ties keep insertion order."""
    cell = p.bank.get((model_id, anchor))
    if cell is None:
        raise UnknownCellError(f"no bank for ({model_id}, {anchor})")
    X, y = cell
    emb = embedding_of(q)
    d2 = np.sum((X - emb) ** 2, axis=1)
    order = np.argsort(d2, kind="stable")
    return float(np.mean(y[order[: p.k]]))


@dataclass(frozen=True, eq=False)
class LinearPredictor:
    """Per-cell ridge regression: weights plus intercept."""

    ridge: float
    cells: dict[tuple[str, int], tuple[np.ndarray, float]]


def linear_fit(train: Dataset, ridge: float = 1e-6) -> LinearPredictor:
    """Fit per-cell ridge regression via the normal equations.

    The Gram matrix is factorized with a Cholesky decomposition; a singular
    system (possible only at ridge = 0) is reported so the caller can retry
    with a positive ridge.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    cells = {}
    for cell, (X, y) in _cell_arrays(train).items():
        x_mean = X.mean(axis=0)
        y_mean = float(y.mean())
        Xc = X - x_mean
        gram = Xc.T @ Xc + ridge * np.eye(X.shape[1])
        try:
            factor = cho_factor(gram, lower=True)
        except LinAlgError as e:
            raise SingularSystemError(f"singular normal equations for cell {cell}; use ridge > 0") from e
        w = cho_solve(factor, Xc.T @ (y - y_mean))
        b = y_mean - float(x_mean @ w)
        cells[cell] = (w, b)
    return LinearPredictor(ridge=ridge, cells=cells)


def linear_predict(p: LinearPredictor, q: Query | np.ndarray, model_id: str, anchor: int) -> float:
    cell = p.cells.get((model_id, anchor))
    if cell is None:
        raise UnknownCellError(f"no fit for ({model_id}, {anchor})")
    w, b = cell
    return float(embedding_of(q) @ w + b)
