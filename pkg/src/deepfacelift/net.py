"""Stage-1 frame-level network.

A fully connected ReLU network over Z-scored landmark vectors. Each frame is
trained against its sequence's label(s); with two tasks the VAS and OPI heads
share every hidden layer. Personal features can be appended to the input or
to the output of the third hidden layer.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Optional, Sequence

import jsonschema
import numpy as np

from .data import N_COORDS, N_PERSONAL, PersonProfile, SequenceRecord, encode_personal
from .errors import BadConfig, EmptyTrainingSet, ShapeMismatch

DEFAULT_HIDDEN_SIZES = (300, 100, 10, 100)
THIRD_LAYER = 3


class Injection(str, Enum):
    NONE = "none"
    INPUT = "input"
    THIRD_LAYER = "third_layer"


class Tasks(str, Enum):
    VAS = "vas"
    VAS_OPI = "vas+opi"

    @property
    def heads(self) -> tuple:
        return ("vas",) if self is Tasks.VAS else ("vas", "opi")


@dataclass(frozen=True)
class MlpConfig:
    hidden_sizes: tuple = DEFAULT_HIDDEN_SIZES
    injection: Injection = Injection.NONE
    tasks: Tasks = Tasks.VAS
    epochs: int = 100
    batch_size: int = 300
    learning_rate: float = 1e-3
    seed: int = 0
    exclude_personal: tuple = ()
    input_dim: int = N_COORDS
    personal_dim: int = N_PERSONAL
    precision: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "injection", Injection(self.injection))
        object.__setattr__(self, "tasks", Tasks(self.tasks))
        object.__setattr__(self, "exclude_personal", tuple(sorted(self.exclude_personal)))
        if any(h < 1 for h in self.hidden_sizes):
            raise BadConfig("hidden layer sizes must be positive")
        if self.injection is Injection.THIRD_LAYER and len(self.hidden_sizes) < THIRD_LAYER + 1:
            raise BadConfig("third-layer injection needs at least 4 hidden layers")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise BadConfig("epochs, batch_size and learning_rate must be positive")
        if self.precision not in ("float64", "float32"):
            raise BadConfig(f"precision must be float64 or float32, got {self.precision!r}")
        unknown = set(self.exclude_personal) - {"complexion", "age", "gender"}
        if unknown:
            raise BadConfig(f"unknown personal feature(s) {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "hidden_sizes": list(self.hidden_sizes),
            "injection": self.injection.value,
            "tasks": self.tasks.value,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "exclude_personal": list(self.exclude_personal),
            "input_dim": self.input_dim,
            "personal_dim": self.personal_dim,
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        d = dict(d)
        for key in ("hidden_sizes", "exclude_personal"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class MlpModel:
    """Weights are stored (fan_in, fan_out) so a batch forward is ``X @ W + b``."""

    config: MlpConfig
    weights: list
    biases: list
    head_weights: np.ndarray
    head_bias: np.ndarray
    input_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_COORDS))
    input_std: np.ndarray = field(default_factory=lambda: np.ones(N_COORDS))

    @property
    def input_dim(self) -> int:
        """Width of the first layer's input (landmarks plus any input-level personal features)."""
        extra = self.config.personal_dim if self.config.injection is Injection.INPUT else 0
        return self.config.input_dim + extra

    @property
    def uses_personal(self) -> bool:
        return self.config.injection is not Injection.NONE

    @property
    def heads(self) -> tuple:
        return self.config.tasks.heads

    def params(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out + [self.head_weights, self.head_bias]

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        n = len(self.weights)
        self.weights = [params[2 * i] for i in range(n)]
        self.biases = [params[2 * i + 1] for i in range(n)]
        self.head_weights, self.head_bias = params[2 * n], params[2 * n + 1]

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)

    def normalize(self, landmarks) -> np.ndarray:
        return (np.asarray(landmarks, dtype=float) - self.input_mean) / self.input_std

    def personal_vector(self, profile: PersonProfile) -> np.ndarray:
        return encode_personal(profile, exclude=self.config.exclude_personal)

    # ------------------------------------------------------------ serialization

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "normalization": {"mean": self.input_mean.tolist(), "std": self.input_std.tolist()},
            "layers": [{"weights": W.tolist(), "bias": b.tolist()} for W, b in zip(self.weights, self.biases)],
            "heads": {
                "names": list(self.heads),
                "weights": self.head_weights.tolist(),
                "bias": self.head_bias.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        jsonschema.validate(d, load_schema("mlp_model"))
        cfg = MlpConfig.from_dict(d["config"])
        model = cls(
            cfg,
            [np.array(layer["weights"], dtype=float).reshape(len(layer["weights"]), -1) for layer in d["layers"]],
            [np.array(layer["bias"], dtype=float) for layer in d["layers"]],
            np.array(d["heads"]["weights"], dtype=float).reshape(-1, len(cfg.tasks.heads)),
            np.array(d["heads"]["bias"], dtype=float),
            np.array(d["normalization"]["mean"], dtype=float),
            np.array(d["normalization"]["std"], dtype=float),
        )
        _check_shapes(model)
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "MlpModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def load_schema(name: str) -> dict:
    text = resources.files("deepfacelift").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _layer_fan_ins(cfg: MlpConfig) -> list:
    personal = cfg.personal_dim
    fan_in = cfg.input_dim + (personal if cfg.injection is Injection.INPUT else 0)
    fan_ins = []
    for i, width in enumerate(cfg.hidden_sizes):
        if i == THIRD_LAYER and cfg.injection is Injection.THIRD_LAYER:
            fan_in += personal
        fan_ins.append(fan_in)
        fan_in = width
    return fan_ins + [fan_in]


def _check_shapes(model: MlpModel) -> None:
    cfg = model.config
    fan_ins = _layer_fan_ins(cfg)
    if len(model.weights) != len(cfg.hidden_sizes):
        raise ShapeMismatch("layer count does not match hidden_sizes")
    for W, b, fi, fo in zip(model.weights, model.biases, fan_ins, cfg.hidden_sizes):
        if W.shape != (fi, fo) or b.shape != (fo,):
            raise ShapeMismatch(f"layer shape {W.shape}/{b.shape}, expected {(fi, fo)}/{(fo,)}")
    n_heads = len(cfg.tasks.heads)
    if model.head_weights.shape != (fan_ins[-1], n_heads) or model.head_bias.shape != (n_heads,):
        raise ShapeMismatch("head shape mismatch")
    if model.input_mean.shape != (cfg.input_dim,) or model.input_std.shape != (cfg.input_dim,):
        raise ShapeMismatch("normalization shape mismatch")
    if np.any(model.input_std <= 0):
        raise ShapeMismatch("normalization stddevs must be positive")


def init_model(cfg: MlpConfig) -> MlpModel:
    """Glorot-uniform weights, zero biases, identity normalization."""
    rng = np.random.default_rng(cfg.seed)
    fan_ins = _layer_fan_ins(cfg)
    fan_outs = list(cfg.hidden_sizes) + [len(cfg.tasks.heads)]
    mats = []
    for fi, fo in zip(fan_ins, fan_outs):
        bound = np.sqrt(6.0 / (fi + fo))
        mats.append(rng.uniform(-bound, bound, size=(fi, fo)))
    return MlpModel(
        cfg,
        mats[:-1],
        [np.zeros(fo) for fo in cfg.hidden_sizes],
        mats[-1],
        np.zeros(len(cfg.tasks.heads)),
        np.zeros(cfg.input_dim),
        np.ones(cfg.input_dim),
    )


def _check_personal(model: MlpModel, P, n: int):
    if model.uses_personal:
        if P is None:
            raise ShapeMismatch("model injects personal features but none were supplied")
        P = np.atleast_2d(np.asarray(P))
        if P.shape != (n, model.config.personal_dim):
            if P.shape == (1, model.config.personal_dim):
                P = np.repeat(P, n, axis=0)
            else:
                raise ShapeMismatch(f"personal features shape {P.shape}, expected ({n}, {model.config.personal_dim})")
        return P
    if P is not None:
        raise ShapeMismatch("model has no personal-feature injection but personal features were supplied")
    return None


def forward_normalized(model: MlpModel, Xn: np.ndarray, P: Optional[np.ndarray] = None):
    """Batch forward pass on already-normalized inputs.

    Returns ``(outputs, layer_inputs, pre_activations)``: ``layer_inputs[i]``
    is what hidden layer ``i`` (or the heads, for the last entry) consumed,
    with personal features concatenated where configured.
    """
    Xn = np.atleast_2d(np.asarray(Xn))
    if Xn.shape[1] != model.config.input_dim:
        raise ShapeMismatch(f"input has {Xn.shape[1]} features, model expects {model.config.input_dim}")
    P = _check_personal(model, P, Xn.shape[0])
    inj = model.config.injection
    a = np.hstack([Xn, P]) if inj is Injection.INPUT else Xn
    layer_inputs, pre = [], []
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        if i == THIRD_LAYER and inj is Injection.THIRD_LAYER:
            a = np.hstack([a, P])
        layer_inputs.append(a)
        z = a @ W + b
        pre.append(z)
        a = np.maximum(z, 0.0)
    layer_inputs.append(a)
    return a @ model.head_weights + model.head_bias, layer_inputs, pre


def forward(model: MlpModel, landmarks, personal=None):
    """Single-frame forward pass from raw landmarks.

    Returns ``(vas_hat, opi_hat, activations)`` where ``opi_hat`` is None for a
    VAS-only model and ``activations`` lists each hidden layer's post-ReLU
    vector followed by the raw head outputs.
    """
    x = np.asarray(landmarks, dtype=float)
    if x.shape != (model.config.input_dim,):
        raise ShapeMismatch(f"expected a {model.config.input_dim}-vector of landmarks, got shape {x.shape}")
    P = None if personal is None else np.asarray(personal, dtype=float)[None, :]
    out, layer_inputs, pre = forward_normalized(model, model.normalize(x)[None, :], P)
    acts = [np.maximum(z[0], 0.0) for z in pre] + [out[0]]
    opi = float(out[0, 1]) if out.shape[1] > 1 else None
    return float(out[0, 0]), opi, acts


def loss_and_grads(model: MlpModel, Xn, P, Y):
    """Mean over frames of the per-frame squared error summed over heads.

    ``Y`` has one column per head. Gradients follow ``model.params()`` order.
    """
    Y = np.atleast_2d(np.asarray(Y))
    out, layer_inputs, pre = forward_normalized(model, Xn, P)
    B = out.shape[0]
    diff = out - Y
    loss = float(np.sum(diff * diff) / B)
    g = (2.0 / B) * diff
    grads_W, grads_b = [], []
    gW_head = layer_inputs[-1].T @ g
    gb_head = g.sum(axis=0)
    delta = g @ model.head_weights.T
    n_personal = model.config.personal_dim
    for i in range(len(model.weights) - 1, -1, -1):
        dz = delta * (pre[i] > 0)
        grads_W.append(layer_inputs[i].T @ dz)
        grads_b.append(dz.sum(axis=0))
        if i == 0:
            break
        delta = dz @ model.weights[i].T
        if i == THIRD_LAYER and model.config.injection is Injection.THIRD_LAYER:
            delta = delta[:, :-n_personal]
    grads = []
    for gW, gb in zip(reversed(grads_W), reversed(grads_b)):
        grads += [gW, gb]
    return loss, grads + [gW_head, gb_head]


@dataclass
class TrainingSet:
    """Frame-level design matrices with sequence labels broadcast to frames."""

    X: np.ndarray
    P: Optional[np.ndarray]
    Y: np.ndarray
    sequence_ids: list


def build_training_set(sequences: Sequence[SequenceRecord], profiles, cfg: MlpConfig) -> TrainingSet:
    if not sequences:
        raise EmptyTrainingSet("no training sequences")
    X = np.vstack([s.landmark_matrix for s in sequences])
    counts = [len(s) for s in sequences]
    labels = [[s.vas] if cfg.tasks is Tasks.VAS else [s.vas, s.opi] for s in sequences]
    Y = np.repeat(np.array(labels, dtype=float), counts, axis=0)
    P = None
    if cfg.injection is not Injection.NONE:
        per_seq = np.array([encode_personal(profiles[s.person_id], exclude=cfg.exclude_personal) for s in sequences])
        P = np.repeat(per_seq, counts, axis=0)
    ids = [s.sequence_id for s in sequences for _ in range(len(s))]
    return TrainingSet(X, P, Y, ids)


def fit_normalization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            out.append(p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
        return out


def train(model: MlpModel, train_sequences: Sequence[SequenceRecord], profiles, cfg: Optional[MlpConfig] = None):
    """Mini-batch Adam on frame-level MSE; returns ``(model, loss_history)``.

    The input normalization is refit on the training frames. The passed model
    is not modified. With ``precision="float32"`` the optimization runs in
    single precision; the returned weights are always float64.
    """
    cfg = cfg or model.config
    dtype = np.dtype(cfg.precision)
    ts = build_training_set(train_sequences, profiles, cfg)
    model = model.copy()
    model.input_mean, model.input_std = fit_normalization(ts.X)
    Xn = model.normalize(ts.X).astype(dtype)
    Y = ts.Y.astype(dtype)
    P_all = None if ts.P is None else ts.P.astype(dtype)
    model.set_params([p.astype(dtype) for p in model.params()])
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(model.params(), lr=cfg.learning_rate)
    n = Xn.shape[0]
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            P = None if P_all is None else P_all[idx]
            loss, grads = loss_and_grads(model, Xn[idx], P, Y[idx])
            total += loss * idx.size
            model.set_params(opt.step(model.params(), grads))
        history.append(total / n)
    model.set_params([p.astype(np.float64) for p in model.params()])
    return model, history


@dataclass(frozen=True)
class FramePredictions:
    sequence_id: str
    vas_frames: np.ndarray
    opi_frames: Optional[np.ndarray] = None


def predict_frames(model: MlpModel, sequence: SequenceRecord, profile: Optional[PersonProfile] = None) -> FramePredictions:
    P = None
    if model.uses_personal:
        if profile is None:
            raise ShapeMismatch("model injects personal features; a profile is required")
        P = model.personal_vector(profile)[None, :]
    out, _, _ = forward_normalized(model, model.normalize(sequence.landmark_matrix), P)
    opi = out[:, 1].copy() if out.shape[1] > 1 else None
    return FramePredictions(sequence.sequence_id, out[:, 0].copy(), opi)
