"""Classifier family, cross-entropy loss, analytic gradients, optimizers.

Three architectures share one parameter container: softmax regression, a
one-hidden-layer ReLU MLP, and a tiny convnet (one 3x3 conv, ReLU, 2x2 max
pool, dense).  Gradients are hand-derived and checked against finite
differences in the test suite.  All math is float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .data import stack_examples
from .rng import RngStream

PARAMS_MAGIC = b"FBMP"
PARAMS_VERSION = 1

ARCH_KINDS = ("softmax", "mlp", "tinyconv")


@dataclass(frozen=True)
class ArchSpec:
    """Architecture tag; fixes all tensor shapes together with the data shape."""

    kind: str
    image_shape: tuple[int, int]
    num_classes: int
    hidden: int = 0
    filters: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ARCH_KINDS:
            raise ValueError(f"unknown architecture {self.kind!r}")
        h, w = self.image_shape
        if h < 1 or w < 1 or self.num_classes < 2:
            raise ValueError("architecture needs a nonempty image shape and >= 2 classes")
        if self.kind == "mlp" and self.hidden < 1:
            raise ValueError("mlp requires hidden >= 1")
        if self.kind == "tinyconv":
            if self.filters < 1:
                raise ValueError("tinyconv requires filters >= 1")
            if h < 2 or w < 2:
                raise ValueError("tinyconv requires images of at least 2x2")

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        h, w = self.image_shape
        d = h * w
        c = self.num_classes
        if self.kind == "softmax":
            return {"w": (c, d), "b": (c,)}
        if self.kind == "mlp":
            return {
                "w1": (self.hidden, d),
                "b1": (self.hidden,),
                "w2": (c, self.hidden),
                "b2": (c,),
            }
        pooled = self.filters * (h // 2) * (w // 2)
        return {
            "conv_w": (self.filters, 3, 3),
            "conv_b": (self.filters,),
            "fc_w": (c, pooled),
            "fc_b": (c,),
        }


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Named weight tensors for one architecture."""

    arch: ArchSpec
    tensors: dict[str, np.ndarray]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.arch == other.arch and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors
        )


@dataclass(frozen=True)
class LossReport:
    loss: float
    accuracy: float


@dataclass(frozen=True)
class OptimizerState:
    """SGD or Adadelta state; a pure value threaded through optimizer_step."""

    kind: str  # "sgd" | "adadelta"
    lr: float
    rho: float = 0.9
    eps: float = 1e-6
    acc_grad_sq: dict[str, np.ndarray] | None = None
    acc_delta_sq: dict[str, np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("sgd", "adadelta"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")


def _glorot(gen: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-bound, bound, size=shape)


def init_params(arch: ArchSpec, rng: RngStream) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic given the rng lane."""
    gen = rng.generator()
    shapes = arch.tensor_shapes()
    tensors: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if name.endswith("b") or name.startswith("b"):
            tensors[name] = np.zeros(shape, dtype=np.float64)
        elif name == "conv_w":
            f = shape[0]
            tensors[name] = _glorot(gen, shape, 9, f * 9)
        else:
            tensors[name] = _glorot(gen, shape, shape[1], shape[0])
    return ModelParams(arch, tensors)


def _check_batch(arch: ArchSpec, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1:] != arch.image_shape:
        raise ValueError(
            f"batch shape {images.shape} does not match image shape {arch.image_shape}"
        )
    return images


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward_trace(params: ModelParams, images: np.ndarray) -> tuple[np.ndarray, dict]:
    """Logits plus the intermediates the backward pass needs."""
    arch = params.arch
    t = params.tensors
    n = images.shape[0]
    trace: dict = {}
    if arch.kind == "softmax":
        x = images.reshape(n, -1)
        trace["x"] = x
        return x @ t["w"].T + t["b"], trace
    if arch.kind == "mlp":
        x = images.reshape(n, -1)
        z1 = x @ t["w1"].T + t["b1"]
        a1 = np.maximum(z1, 0.0)
        trace.update(x=x, z1=z1, a1=a1)
        return a1 @ t["w2"].T + t["b2"], trace
    conv = _kernels.conv3x3_forward(images, t["conv_w"], t["conv_b"])
    act = np.maximum(conv, 0.0)
    pooled, switches = _kernels.maxpool2_forward(act)
    flat = pooled.reshape(n, -1)
    trace.update(conv=conv, switches=switches, flat=flat)
    return flat @ t["fc_w"].T + t["fc_b"], trace


def forward(params: ModelParams, images: np.ndarray) -> np.ndarray:
    """Per-example class probabilities (rows sum to 1)."""
    images = _check_batch(params.arch, images)
    logits, _ = _forward_trace(params, images)
    return np.exp(_log_softmax(logits))


def loss_and_grad(
    params: ModelParams, images: np.ndarray, labels: np.ndarray
) -> tuple[LossReport, dict[str, np.ndarray]]:
    """Mean cross-entropy and its analytic gradient over a batch."""
    arch = params.arch
    images = _check_batch(arch, images)
    labels = np.asarray(labels, dtype=np.int64)
    n = images.shape[0]
    if n == 0:
        raise ValueError("batch must be nonempty")
    if labels.min() < 0 or labels.max() >= arch.num_classes:
        raise ValueError("label out of range")

    logits, trace = _forward_trace(params, images)
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())
    accuracy = float((logits.argmax(axis=1) == labels).mean())

    probs = np.exp(logp)
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    t = params.tensors
    if arch.kind == "softmax":
        grads = {"w": dlogits.T @ trace["x"], "b": dlogits.sum(axis=0)}
    elif arch.kind == "mlp":
        da1 = dlogits @ t["w2"]
        dz1 = da1 * (trace["z1"] > 0.0)
        grads = {
            "w1": dz1.T @ trace["x"],
            "b1": dz1.sum(axis=0),
            "w2": dlogits.T @ trace["a1"],
            "b2": dlogits.sum(axis=0),
        }
    else:
        h, w = arch.image_shape
        dflat = dlogits @ t["fc_w"]
        dpooled = dflat.reshape(n, arch.filters, h // 2, w // 2)
        dact = _kernels.maxpool2_backward(dpooled, trace["switches"], h, w)
        dconv = dact * (trace["conv"] > 0.0)
        dx, dw, db = _kernels.conv3x3_backward(images, t["conv_w"], dconv)
        grads = {
            "conv_w": dw,
            "conv_b": db,
            "fc_w": dlogits.T @ trace["flat"],
            "fc_b": dlogits.sum(axis=0),
        }
    return LossReport(loss, accuracy), grads


def _check_shapes(params: ModelParams, grads: dict[str, np.ndarray]) -> None:
    for name, tensor in params.tensors.items():
        if name not in grads or grads[name].shape != tensor.shape:
            raise ValueError(f"gradient shape mismatch for tensor {name!r}")


def optimizer_step(
    state: OptimizerState, params: ModelParams, grads: dict[str, np.ndarray]
) -> tuple[ModelParams, OptimizerState]:
    """One update; pure in (state, params, grads)."""
    _check_shapes(params, grads)
    if state.kind == "sgd":
        tensors = {k: v - state.lr * grads[k] for k, v in params.tensors.items()}
        return ModelParams(params.arch, tensors), state

    eg = state.acc_grad_sq or {k: np.zeros_like(v) for k, v in params.tensors.items()}
    ed = state.acc_delta_sq or {k: np.zeros_like(v) for k, v in params.tensors.items()}
    new_eg, new_ed, tensors = {}, {}, {}
    for k, v in params.tensors.items():
        g = grads[k]
        new_eg[k] = state.rho * eg[k] + (1.0 - state.rho) * g * g
        delta = -np.sqrt(ed[k] + state.eps) / np.sqrt(new_eg[k] + state.eps) * g
        new_ed[k] = state.rho * ed[k] + (1.0 - state.rho) * delta * delta
        tensors[k] = v + state.lr * delta
    return ModelParams(params.arch, tensors), replace(
        state, acc_grad_sq=new_eg, acc_delta_sq=new_ed
    )


def local_train(
    params: ModelParams,
    examples,
    epochs: int,
    batch_size: int,
    optimizer: OptimizerState,
    rng: RngStream,
) -> ModelParams:
    """Client-side training: epochs of shuffled mini-batches, fresh optimizer state.

    `examples` is a sequence of LabeledExample; the last batch of an epoch may
    be short.  Optimizer state never persists across invocations.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(examples) == 0:
        raise ValueError("cannot train on an empty shard")

    images, labels = stack_examples(examples, params.arch.image_shape)
    gen = rng.generator()
    state = replace(optimizer, acc_grad_sq=None, acc_delta_sq=None)
    n = len(examples)
    for _ in range(epochs):
        order = gen.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, grads = loss_and_grad(params, images[idx], labels[idx])
            params, state = optimizer_step(state, params, grads)
    return params


def params_weighted_sum(updates: list[ModelParams], weights: np.ndarray) -> ModelParams:
    """Componentwise weighted sum; callers order updates deterministically."""
    arch = updates[0].arch
    for u in updates[1:]:
        if u.arch != arch:
            raise ValueError("cannot combine parameters from different architectures")
    tensors = {
        k: sum(w * u.tensors[k] for w, u in zip(weights, updates))
        for k in updates[0].tensors
    }
    return ModelParams(arch, tensors)


def flatten_params(params: ModelParams) -> np.ndarray:
    """All tensors concatenated in their fixed declaration order."""
    return np.concatenate([params.tensors[k].ravel() for k in params.arch.tensor_shapes()])


def params_allclose(a: ModelParams, b: ModelParams, atol: float = 0.0, rtol: float = 1e-12):
    if a.arch != b.arch:
        return False
    return all(
        np.allclose(a.tensors[k], b.tensors[k], atol=atol, rtol=rtol) for k in a.tensors
    )


def save_params(params: ModelParams, path) -> None:
    """Named-tensor checkpoint, float64 little-endian."""
    arch = params.arch
    with open(path, "wb") as f:
        f.write(PARAMS_MAGIC)
        kind = arch.kind.encode("utf-8")
        f.write(struct.pack("<HH", PARAMS_VERSION, len(kind)))
        f.write(kind)
        f.write(
            struct.pack(
                "<HHHHH",
                arch.image_shape[0],
                arch.image_shape[1],
                arch.num_classes,
                arch.hidden,
                arch.filters,
            )
        )
        f.write(struct.pack("<H", len(params.tensors)))
        for name, tensor in params.tensors.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", tensor.ndim))
            f.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            f.write(tensor.astype("<f8").tobytes())


def load_params(path) -> ModelParams:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != PARAMS_MAGIC:
        raise ValueError("malformed checkpoint: bad magic")
    version, kind_len = struct.unpack_from("<HH", blob, 4)
    if version != PARAMS_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 8
    kind = blob[pos : pos + kind_len].decode("utf-8")
    pos += kind_len
    h, w, c, hidden, filters = struct.unpack_from("<HHHHH", blob, pos)
    pos += 10
    (count,) = struct.unpack_from("<H", blob, pos)
    pos += 2
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        size = int(np.prod(shape))
        tensors[name] = (
            np.frombuffer(blob, dtype="<f8", count=size, offset=pos)
            .reshape(shape)
            .astype(np.float64)
        )
        pos += 8 * size
    arch = ArchSpec(kind, (h, w), c, hidden=hidden, filters=filters)
    expected = arch.tensor_shapes()
    if set(expected) != set(tensors) or any(
        tensors[k].shape != expected[k] for k in expected
    ):
        raise ValueError("checkpoint tensors do not match the declared architecture")
    return ModelParams(arch, tensors)
