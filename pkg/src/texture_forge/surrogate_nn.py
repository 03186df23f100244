"""Per-mode MLP surrogate of one processing step.

Each model maps an ODF to the ODF after one step of its mode:
``h = tanh(M0 a + b0)``, ``u = relu(M1 h + b1)``, ``y = u / (q.u + eps)``.
The last stage makes every output nonnegative and volume-normalized.
Training minimizes the q-weighted MSE with Adam and cosine warm restarts;
gradients are computed analytically.
"""
import math
from dataclasses import asdict, dataclass

import numpy as np

from .crystal_plasticity import ALL_MODES, ProcessMode, as_mode
from .errors import ConfigurationError, DeadOutputError, InvalidArgumentError

HIDDEN_UNITS = 760
NORM_EPS = 1e-12
DEAD_GUARD = 1e-8
FORMAT_VERSION = 1
INPUT_GAIN = 0.1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 310
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t0: int = 10  # first restart period, epochs
    t_mult: int = 2
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be a positive integer")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise InvalidArgumentError("epochs must be a nonnegative integer")
        if self.t0 < 1 or self.t_mult < 1:
            raise InvalidArgumentError("restart period and multiplier must be >= 1")
        # lr 0 is accepted so that a frozen run is expressible
        if not (0 <= self.lr_min <= self.lr_max) or not math.isfinite(self.lr_max):
            raise InvalidArgumentError("need 0 <= lr_min <= lr_max")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise InvalidArgumentError("invalid Adam constants")

    def learning_rate(self, epoch):
        """Cosine-annealed rate for a 0-based epoch, restarting at the end of each period."""
        period, start = self.t0, 0
        while epoch >= start + period:
            start += period
            period *= self.t_mult
        frac = (epoch - start) / period
        return self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + math.cos(math.pi * frac))

    def to_dict(self):
        return asdict(self)


@dataclass
class MlpModel:
    mode: ProcessMode
    weights: list  # [M0 (H, N), M1 (N, H)]
    biases: list  # [b0 (H,), b1 (N,)]
    norm_weights: np.ndarray  # mesh q
    train_config: dict = None
    hidden_activation: str = "tanh"
    output_stage: str = "relu-normalize"

    def __post_init__(self):
        m0, m1 = self.weights
        b0, b1 = self.biases
        n = len(self.norm_weights)
        if m0.shape != (len(b0), n) or m1.shape != (n, len(b0)) or b1.shape != (n,):
            raise InvalidArgumentError("parameter shapes inconsistent with dims")

    @property
    def dims(self):
        return [self.weights[0].shape[1], self.weights[0].shape[0], self.weights[1].shape[0]]

    def parameters(self):
        return [self.weights[0], self.biases[0], self.weights[1], self.biases[1]]

    def copy(self):
        return MlpModel(
            mode=self.mode,
            weights=[m.copy() for m in self.weights],
            biases=[b.copy() for b in self.biases],
            norm_weights=self.norm_weights.copy(),
            train_config=None if self.train_config is None else dict(self.train_config),
        )

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "mode": self.mode.mask,
            "dims": self.dims,
            "hidden_activation": self.hidden_activation,
            "output_stage": self.output_stage,
            "weights": [m.tolist() for m in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "norm_weights": self.norm_weights.tolist(),
            "train_config": self.train_config,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format_version") != FORMAT_VERSION:
            raise InvalidArgumentError(f"unsupported model format {data.get('format_version')!r}")
        model = cls(
            mode=ProcessMode(data["mode"]),
            weights=[np.asarray(m, dtype=float) for m in data["weights"]],
            biases=[np.asarray(b, dtype=float) for b in data["biases"]],
            norm_weights=np.asarray(data["norm_weights"], dtype=float),
            train_config=data.get("train_config"),
        )
        if model.dims != list(data["dims"]):
            raise InvalidArgumentError("stored dims do not match weight shapes")
        return model


def init_model(mode, norm_weights, hidden=HIDDEN_UNITS, seed=0, input_gain=INPUT_GAIN):
    """Seeded Glorot-uniform weights.

    ODF inputs are O(1 / sum q), not unit scale, so the first layer is scaled
    by ``input_gain`` to start the tanh units near their linear range.  The
    output bias starts at the uniform density so that no ReLU channel is dead
    at the first step.
    """
    mode = as_mode(mode)
    q = np.asarray(norm_weights, dtype=float)
    n = len(q)
    rng = np.random.default_rng(seed)

    def glorot(fan_out, fan_in):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_out, fan_in))

    return MlpModel(
        mode=mode,
        weights=[input_gain * glorot(hidden, n), glorot(n, hidden)],
        biases=[np.zeros(hidden), np.full(n, 1.0 / q.sum())],
        norm_weights=q.copy(),
    )


def _forward_cache(model, x):
    m0, m1 = model.weights
    b0, b1 = model.biases
    h = np.tanh(x @ m0.T + b0)
    z2 = h @ m1.T + b1
    u = np.maximum(z2, 0.0)
    mass = u @ model.norm_weights
    if np.any(mass < DEAD_GUARD):
        raise DeadOutputError(f"network output has no positive mass (min q.u = {float(np.min(mass))!r})")
    s = mass + NORM_EPS
    return h, z2, u, s, u / s[:, None]


def forward(model, a):
    """Predicted ODF for one input (N,) or a batch (B, N)."""
    x = np.asarray(a, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.dims[0]:
        raise InvalidArgumentError(f"input must have {model.dims[0]} entries, got {x.shape[1]}")
    y = _forward_cache(model, x)[-1]
    return y[0] if single else y


def wmse(y_true, y_pred, w):
    """``(1/B) sum_b sum_i w_i (y_bi - y*_bi)^2 / sum_i w_i``."""
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    y_pred = np.atleast_2d(np.asarray(y_pred, dtype=float))
    w = np.asarray(w, dtype=float)
    if y_true.shape != y_pred.shape or w.shape != y_true.shape[-1:]:
        raise InvalidArgumentError("shape mismatch between targets, predictions and weights")
    if np.any(w < 0) or not w.sum() > 0:
        raise InvalidArgumentError("weights must be nonnegative with a positive sum")
    return float(np.mean((y_true - y_pred) ** 2 @ w) / w.sum())


def backward(model, x, y_true, w=None):
    """Loss and its exact gradients in the order of :meth:`MlpModel.parameters`."""
    w = model.norm_weights if w is None else np.asarray(w, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    h, z2, u, s, y = _forward_cache(model, x)
    loss = wmse(y_true, y, w)
    batch = len(x)
    gy = 2.0 * (y - y_true) * w / (batch * w.sum())
    # through y = u / s with s = q.u + eps
    gu = gy / s[:, None] - np.outer(np.einsum("bi,bi->b", gy, u) / s**2, model.norm_weights)
    gz2 = gu * (z2 > 0)
    gm1 = gz2.T @ h
    gb1 = gz2.sum(axis=0)
    gz1 = (gz2 @ model.weights[1]) * (1.0 - h**2)
    gm0 = gz1.T @ x
    gb0 = gz1.sum(axis=0)
    return loss, [gm0, gb0, gm1, gb1]


def _stack(records, mode):
    if len(records) == 0:
        return np.empty((0, 0)), np.empty((0, 0))
    for rec in records:
        if as_mode(rec.mode) != mode:
            raise InvalidArgumentError(f"record for mode {rec.mode} passed to the model of mode {mode}")
    x = np.array([rec.input_odf for rec in records], dtype=float)
    y = np.array([rec.output_odf for rec in records], dtype=float)
    return x, y


def _dataset_wmse(model, x, y):
    if len(x) == 0:
        return float("nan")
    return wmse(y, forward(model, x), model.norm_weights)


def train(model, train_records, test_records=(), cfg=None):
    """Fit ``model`` in place with Adam and warm restarts.

    Returns ``(model, history)``; ``history["train"]`` and ``history["test"]``
    hold the WMSE before training (index 0) and after every epoch.
    """
    cfg = TrainConfig() if cfg is None else cfg
    if len(train_records) == 0:
        raise InvalidArgumentError("training set is empty")
    x, y = _stack(train_records, model.mode)
    xt, yt = _stack(test_records, model.mode)
    params = model.parameters()
    first = [np.zeros_like(p) for p in params]
    second = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(cfg.seed)
    history = {"train": [_dataset_wmse(model, x, y)], "test": [_dataset_wmse(model, xt, yt)], "lr": []}
    t = 0
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate(epoch)
        history["lr"].append(lr)
        order = rng.permutation(len(x))
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grads = backward(model, x[idx], y[idx])
            t += 1
            c1 = 1.0 - cfg.beta1**t
            c2 = 1.0 - cfg.beta2**t
            for p, g, m, v in zip(params, grads, first, second):
                m *= cfg.beta1
                m += (1.0 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1.0 - cfg.beta2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        history["train"].append(_dataset_wmse(model, x, y))
        history["test"].append(_dataset_wmse(model, xt, yt))
    model.train_config = cfg.to_dict()
    return model, history


class ModelSuite:
    """The 31 per-mode models with parameters stacked for one batched evaluation."""

    def __init__(self, models):
        if isinstance(models, dict):
            by_mask = {as_mode(k).mask: m for k, m in models.items()}
        else:
            by_mask = {m.mode.mask: m for m in models}
        missing = [mode.mask for mode in ALL_MODES if mode.mask not in by_mask]
        if missing:
            raise ConfigurationError(f"no surrogate model for modes {', '.join(missing)}")
        self.models = [by_mask[mode.mask] for mode in ALL_MODES]
        q = self.models[0].norm_weights
        if any(m.norm_weights.shape != q.shape or np.any(m.norm_weights != q) for m in self.models):
            raise ConfigurationError("models were trained on different meshes")
        self.norm_weights = q
        self.m0 = np.stack([m.weights[0] for m in self.models])
        self.b0 = np.stack([m.biases[0] for m in self.models])
        self.m1 = np.stack([m.weights[1] for m in self.models])
        self.b1 = np.stack([m.biases[1] for m in self.models])

    def __getitem__(self, mode):
        return self.models[as_mode(mode).id - 1]

    def predict(self, a):
        """Outcomes of all 31 modes, rows in ascending mode id."""
        a = np.asarray(a, dtype=float)
        if a.shape != (self.m0.shape[2],):
            raise InvalidArgumentError(f"input must have {self.m0.shape[2]} entries, got {a.shape}")
        h = np.tanh(self.m0 @ a + self.b0)
        u = np.maximum(np.einsum("kih,kh->ki", self.m1, h) + self.b1, 0.0)
        mass = u @ self.norm_weights
        if np.any(mass < DEAD_GUARD):
            dead = [ALL_MODES[k].mask for k in np.flatnonzero(mass < DEAD_GUARD)]
            raise DeadOutputError(f"dead output for modes {', '.join(dead)}")
        return u / (mass + NORM_EPS)[:, None]


def predict_all_modes(models, a):
    """Batched forward of one model per mode; accepts a :class:`ModelSuite`,
    a dict keyed by mask or id, or a sequence of models."""
    suite = models if isinstance(models, ModelSuite) else ModelSuite(models)
    return suite.predict(a)
