"""Feature extractor + linear gaze head, reverse-mode gradients, SGD, checkpoints.

The extractor is a small multilayer perceptron ``input -> hidden... ->
embedding``; the last extractor layer is affine (no activation) so embeddings
are unconstrained.  The head is a single affine map ``embedding -> (yaw,
pitch)``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DimensionMismatch, InvalidInput, NonFiniteUpdate

CHECKPOINT_SCHEMA = 1
STAGES = ("initialized", "pretrained", "adapted")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 16
    hidden_layers: tuple[int, ...] = (64, 64)
    embedding_dim: int = 16
    activation: str = "tanh"
    head_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.embedding_dim < 1:
            raise InvalidInput("embedding_dim must be >= 1")
        if not self.hidden_layers:
            raise InvalidInput("hidden_layers must be non-empty")
        if self.activation not in _ACTIVATIONS:
            raise InvalidInput(f"unknown activation {self.activation!r}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_layers, self.embedding_dim]


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0).astype(z.dtype)


def _tanh_grad(z, a):
    return 1.0 - a * a


_ACTIVATIONS = {"relu": (_relu, _relu_grad), "tanh": (np.tanh, _tanh_grad)}


@dataclass
class ModelParams:
    weights: list[np.ndarray]   # weights[l] has shape (fan_in, fan_out)
    biases: list[np.ndarray]
    head_w: np.ndarray          # (embedding_dim, 2)
    head_b: np.ndarray | None   # (2,) or None when the head has no bias

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in declared order: extractor layers, then head."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        out.append(self.head_w)
        if self.head_b is not None:
            out.append(self.head_b)
        return out

    def names(self) -> list[str]:
        out = []
        for i in range(len(self.weights)):
            out += [f"phi.{i}.weight", f"phi.{i}.bias"]
        out.append("head.weight")
        if self.head_b is not None:
            out.append("head.bias")
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.head_w.copy(),
            None if self.head_b is None else self.head_b.copy(),
        )

    @classmethod
    def from_arrays(cls, arrays, cfg: ModelConfig) -> "ModelParams":
        arrays = list(arrays)
        n_layers = len(cfg.layer_sizes) - 1
        weights = arrays[0:2 * n_layers:2]
        biases = arrays[1:2 * n_layers:2]
        head_w = arrays[2 * n_layers]
        head_b = arrays[2 * n_layers + 1] if cfg.head_bias else None
        return cls(weights, biases, head_w, head_b)


def init_params(cfg: ModelConfig, seed) -> ModelParams:
    """Uniform(-a, a) weights with ``a = sqrt(1 / fan_in)``; zero biases."""
    rng = np.random.default_rng(seed)
    sizes = cfg.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    a = np.sqrt(1.0 / cfg.embedding_dim)
    head_w = rng.uniform(-a, a, size=(cfg.embedding_dim, 2))
    head_b = np.zeros(2) if cfg.head_bias else None
    return ModelParams(weights, biases, head_w, head_b)


@dataclass
class ForwardCache:
    pre: list[np.ndarray]    # pre-activations per extractor layer
    post: list[np.ndarray]   # layer inputs; post[0] is the network input

    @property
    def embedding(self) -> np.ndarray:
        return self.pre[-1]


def forward(params: ModelParams, x, cfg: ModelConfig, return_cache: bool = False):
    """Embeddings and gaze predictions for a single input or a batch.

    Returns ``(embedding, prediction)`` and, if requested, the cache needed
    by :func:`backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != cfg.input_dim:
        raise DimensionMismatch(f"input has {X.shape[1]} features, model expects {cfg.input_dim}")
    act, _ = _ACTIVATIONS[cfg.activation]
    n_layers = len(params.weights)
    pre, post = [], [X]
    a = X
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W + b
        pre.append(z)
        if i < n_layers - 1:
            a = act(z)
            post.append(a)
    emb = pre[-1]
    pred = head(params, emb)
    if single:
        emb, pred = emb[0], pred[0]
    if return_cache:
        return emb, pred, ForwardCache(pre, post)
    return emb, pred


def head(params: ModelParams, emb) -> np.ndarray:
    """The linear gaze mapping from embeddings to (yaw, pitch)."""
    out = np.asarray(emb) @ params.head_w
    if params.head_b is not None:
        out = out + params.head_b
    return out


def backward(params: ModelParams, cache: ForwardCache, cfg: ModelConfig,
             d_embedding=None, d_pred=None) -> list[np.ndarray]:
    """Reverse pass through head and extractor.

    ``d_embedding`` and ``d_pred`` are upstream gradients of an already
    batch-averaged scalar loss, so per-sample contributions are summed here.
    Either may be ``None`` (treated as zero).  Returns gradients in the
    order of :meth:`ModelParams.arrays`.
    """
    emb = cache.embedding
    n = emb.shape[0]
    d_emb = np.zeros_like(emb) if d_embedding is None else np.asarray(d_embedding, dtype=np.float64).reshape(emb.shape)
    d_out = np.zeros((n, 2)) if d_pred is None else np.asarray(d_pred, dtype=np.float64).reshape(n, 2)

    g_head_w = emb.T @ d_out
    g_head_b = d_out.sum(axis=0) if params.head_b is not None else None
    d_z = d_emb + d_out @ params.head_w.T

    _, act_grad = _ACTIVATIONS[cfg.activation]
    g_w = [None] * len(params.weights)
    g_b = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        g_w[i] = cache.post[i].T @ d_z
        g_b[i] = d_z.sum(axis=0)
        if i > 0:
            d_a = d_z @ params.weights[i].T
            d_z = d_a * act_grad(cache.pre[i - 1], cache.post[i])

    grads = []
    for W, b in zip(g_w, g_b):
        grads += [W, b]
    grads.append(g_head_w)
    if g_head_b is not None:
        grads.append(g_head_b)
    return grads


@dataclass
class OptimizerState:
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: list[np.ndarray] | None = None

    def hyper(self) -> dict:
        return {"learning_rate": self.learning_rate, "momentum": self.momentum,
                "weight_decay": self.weight_decay}


def sgd_step(params: ModelParams, grads, state: OptimizerState) -> ModelParams:
    """One SGD-momentum step with weight decay folded into the gradient.

        v <- momentum * v + grad + weight_decay * param
        param <- param - lr * v

    Parameters and velocity buffers are updated in place; ``params`` is
    returned for convenience.  Raises :class:`NonFiniteUpdate` (leaving
    everything untouched) if any new value would be non-finite.
    """
    arrays = params.arrays()
    if len(grads) != len(arrays):
        raise DimensionMismatch(f"{len(grads)} gradients for {len(arrays)} parameters")
    if state.velocity is None:
        state.velocity = [np.zeros_like(p) for p in arrays]
    new_v, new_p = [], []
    for p, g, v in zip(arrays, grads, state.velocity):
        if g.shape != p.shape:
            raise DimensionMismatch(f"gradient shape {g.shape} != parameter shape {p.shape}")
        v_next = state.momentum * v + g + state.weight_decay * p
        p_next = p - state.learning_rate * v_next
        new_v.append(v_next)
        new_p.append(p_next)
    bad = [name for name, p in zip(params.names(), new_p) if not np.all(np.isfinite(p))]
    if bad:
        raise NonFiniteUpdate(f"non-finite values after update in {', '.join(bad)}")
    for p, p_next, v, v_next in zip(arrays, new_p, state.velocity, new_v):
        p[...] = p_next
        v[...] = v_next
    return params


@dataclass
class Model:
    """A network together with its optimizer state and training stage."""

    config: ModelConfig
    params: ModelParams
    optimizer: OptimizerState = field(default_factory=OptimizerState)
    stage: str = "initialized"
    rng_state: dict | None = None

    @classmethod
    def create(cls, config: ModelConfig, seed, optimizer: OptimizerState | None = None):
        return cls(config, init_params(config, seed), optimizer or OptimizerState())

    def predict(self, x) -> np.ndarray:
        return forward(self.params, x, self.config)[1]

    def embed(self, x) -> np.ndarray:
        return forward(self.params, x, self.config)[0]

    def copy(self) -> "Model":
        opt = OptimizerState(**self.optimizer.hyper())
        if self.optimizer.velocity is not None:
            opt.velocity = [v.copy() for v in self.optimizer.velocity]
        rng_state = json.loads(json.dumps(self.rng_state)) if self.rng_state else None
        return Model(self.config, self.params.copy(), opt, self.stage, rng_state)


def _encode(arr: np.ndarray) -> dict:
    # float() repr round-trips float64 exactly (17 significant digits at most)
    return {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}


def _decode(obj: dict) -> np.ndarray:
    return np.asarray(obj["data"], dtype=np.float64).reshape(obj["shape"])


def checkpoint_dict(model: Model) -> dict:
    params = model.params
    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        "stage": model.stage,
        "model_config": {**asdict(model.config), "hidden_layers": list(model.config.hidden_layers)},
        "parameter_order": params.names(),
        "parameters": [_encode(a) for a in params.arrays()],
        "optimizer": {
            **model.optimizer.hyper(),
            "velocity": None if model.optimizer.velocity is None
            else [_encode(v) for v in model.optimizer.velocity],
        },
        "rng_state": model.rng_state,
    }
    return doc


def model_from_dict(doc: dict) -> Model:
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"unsupported checkpoint schema {doc.get('schema_version')!r}")
    if doc.get("stage") not in STAGES:
        raise CheckpointError(f"unknown stage marker {doc.get('stage')!r}")
    cfg = ModelConfig(**doc["model_config"])
    arrays = [_decode(a) for a in doc["parameters"]]
    params = ModelParams.from_arrays(arrays, cfg)
    expected = [p.shape for p in init_params(cfg, 0).arrays()]
    if [a.shape for a in params.arrays()] != expected:
        raise CheckpointError("parameter shapes do not match model_config")
    opt_doc = dict(doc["optimizer"])
    velocity = opt_doc.pop("velocity")
    opt = OptimizerState(**opt_doc)
    if velocity is not None:
        opt.velocity = [_decode(v) for v in velocity]
    return Model(cfg, params, opt, doc["stage"], doc.get("rng_state"))


def save_checkpoint(model: Model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_dict(model), indent=1))
    return path


def load_checkpoint(path) -> Model:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint document ({exc})") from exc
    return model_from_dict(doc)
