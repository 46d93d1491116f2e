"""The 50-layer bottleneck-residual classifier for 224x224 cell images.

Structure: a 7x7/64/s2 stem with 3x3/s2 max pooling, four stages of
bottleneck blocks ([3, 4, 6, 3] blocks wide [64, 128, 256, 512], expansion
factor 4, stride-2 entry into stages 3-5), then global average pooling,
a 512-unit ReLU layer, dropout 0.5, and a 2-way softmax head.

Residual join: out = relu(F(x) + shortcut(x)) with F the 1x1 -> 3x3 -> 1x1
conv stack (BN + ReLU after each conv, stride carried by the 3x3). The
shortcut is the identity when shapes allow, else a 1x1 strided projection
with its own BN. Convolutions carry no bias (BN immediately follows); the
two head layers do.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .exceptions import ShapeError
from .tensor import ParamTensor, Tensor

CLASS_NAMES = ("parasitized", "uninfected")
INPUT_HW = 224
STAGES = (  # (name, bottleneck width, block count, stride of first block)
    ("conv2_x", 64, 3, 1),
    ("conv3_x", 128, 4, 2),
    ("conv4_x", 256, 6, 2),
    ("conv5_x", 512, 3, 2),
)
EXPANSION = 4
HEAD_UNITS = 512
DROPOUT_RATE = 0.5


class _Init:
    """Deterministic weight initialization from a single seeded generator."""

    def __init__(self, seed: int, dtype: str):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype

    def conv(self, cout, cin, kh, kw) -> Tensor:
        # scaled normal, std = sqrt(2 / fan_in)
        fan_in = cin * kh * kw
        std = np.sqrt(2.0 / fan_in)
        return Tensor(self.rng.standard_normal((cout, cin, kh, kw)) * std, dtype=self.dtype)

    def dense(self, d, u, scale: float = 1.0) -> tuple[Tensor, Tensor]:
        # uniform +- sqrt(6 / (fan_in + fan_out)), zero bias
        limit = scale * np.sqrt(6.0 / (d + u))
        w = Tensor(self.rng.uniform(-limit, limit, size=(d, u)), dtype=self.dtype)
        return w, Tensor(np.zeros(u), dtype=self.dtype)


class ConvLayer:
    def __init__(self, init: _Init, name: str, cin: int, cout: int, k: int, stride: int):
        self.weight = ParamTensor(init.conv(cout, cin, k, k), name=f"{name}.weight")
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight.value, stride=self.stride, padding="same")

    def params(self):
        return [self.weight]


class BatchNormLayer:
    def __init__(self, name: str, c: int, dtype: str):
        self.gamma = ParamTensor(Tensor(np.ones(c), dtype=dtype), name=f"{name}.gamma")
        self.beta = ParamTensor(Tensor(np.zeros(c), dtype=dtype), name=f"{name}.beta")
        self.running_mean = ParamTensor(
            Tensor(np.zeros(c), dtype=dtype), name=f"{name}.running_mean", trainable=False
        )
        self.running_var = ParamTensor(
            Tensor(np.ones(c), dtype=dtype), name=f"{name}.running_var", trainable=False
        )

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return T.batchnorm2d(
            x, self.gamma.value, self.beta.value,
            self.running_mean.value, self.running_var.value, mode=mode,
        )

    def params(self):
        return [self.gamma, self.beta, self.running_mean, self.running_var]


class DenseLayer:
    def __init__(self, init: _Init, name: str, d: int, u: int, scale: float = 1.0):
        w, b = init.dense(d, u, scale=scale)
        self.weight = ParamTensor(w, name=f"{name}.weight")
        self.bias = ParamTensor(b, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return T.dense(x, self.weight.value, self.bias.value)

    def params(self):
        return [self.weight, self.bias]


class BottleneckBlock:
    """1x1 reduce -> 3x3 (stride s) -> 1x1 expand, plus the shortcut join."""

    def __init__(self, init: _Init, name: str, cin: int, f: int, stride: int, dtype: str):
        self.cin = cin
        self.f = f
        self.stride = stride
        cout = EXPANSION * f
        self.conv1 = ConvLayer(init, f"{name}.conv1", cin, f, k=1, stride=1)
        self.bn1 = BatchNormLayer(f"{name}.bn1", f, dtype)
        self.conv2 = ConvLayer(init, f"{name}.conv2", f, f, k=3, stride=stride)
        self.bn2 = BatchNormLayer(f"{name}.bn2", f, dtype)
        self.conv3 = ConvLayer(init, f"{name}.conv3", f, cout, k=1, stride=1)
        self.bn3 = BatchNormLayer(f"{name}.bn3", cout, dtype)
        if cin != cout or stride != 1:
            self.shortcut_conv = ConvLayer(init, f"{name}.shortcut.conv", cin, cout, k=1, stride=stride)
            self.shortcut_bn = BatchNormLayer(f"{name}.shortcut.bn", cout, dtype)
        else:
            self.shortcut_conv = None
            self.shortcut_bn = None

    @property
    def has_projection(self) -> bool:
        return self.shortcut_conv is not None

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        if x.shape[1] != self.cin:
            raise ShapeError(
                f"block expects {self.cin} input channels, got shape {x.shape}"
            )
        h = T.relu(self.bn1(self.conv1(x), mode))
        h = T.relu(self.bn2(self.conv2(h), mode))
        h = self.bn3(self.conv3(h), mode)
        if self.has_projection:
            sc = self.shortcut_bn(self.shortcut_conv(x), mode)
        else:
            sc = x
        return T.relu(T.add(h, sc))

    def params(self):
        out = (
            self.conv1.params() + self.bn1.params()
            + self.conv2.params() + self.bn2.params()
            + self.conv3.params() + self.bn3.params()
        )
        if self.has_projection:
            out += self.shortcut_conv.params() + self.shortcut_bn.params()
        return out


class ModelGraph:
    """The full network plus its named-parameter registry."""

    def __init__(self, seed: int = 0, dtype: str = "f32"):
        self.seed = seed
        self.dtype = dtype
        self.class_names = list(CLASS_NAMES)
        init = _Init(seed, dtype)

        self.stem_conv = ConvLayer(init, "stem.conv", 3, 64, k=7, stride=2)
        self.stem_bn = BatchNormLayer("stem.bn", 64, dtype)

        self.stages: list[tuple[str, list[BottleneckBlock]]] = []
        cin = 64
        for stage_name, f, blocks, first_stride in STAGES:
            stage = []
            for b in range(blocks):
                stride = first_stride if b == 0 else 1
                block = BottleneckBlock(init, f"{stage_name}.block{b + 1}", cin, f, stride, dtype)
                stage.append(block)
                cin = EXPANSION * f
            self.stages.append((stage_name, stage))

        self.fc1 = DenseLayer(init, "head.fc1", cin, HEAD_UNITS)
        # damped classifier init keeps a fresh model near the uniform
        # prediction (initial loss ~ ln 2) instead of confidently wrong
        self.fc2 = DenseLayer(init, "head.fc2", HEAD_UNITS, len(CLASS_NAMES), scale=0.1)

        names = [p.name for p in self.all_tensors()]
        assert len(names) == len(set(names)), "parameter names must be unique"

    # -- registry ----------------------------------------------------------

    def all_tensors(self) -> list[ParamTensor]:
        """Every named tensor (weights and BN buffers), deterministic order."""
        out = self.stem_conv.params() + self.stem_bn.params()
        for _, stage in self.stages:
            for block in stage:
                out += block.params()
        out += self.fc1.params() + self.fc2.params()
        return out

    def parameters(self) -> list[ParamTensor]:
        """Trainable parameters only, deterministic order."""
        return [p for p in self.all_tensors() if p.trainable]

    def tensor_by_name(self) -> dict[str, ParamTensor]:
        return {p.name: p for p in self.all_tensors()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.data.copy() for p in self.all_tensors()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for p in self.all_tensors():
            p.assign(snap[p.name])

    # -- forward -----------------------------------------------------------

    def logits(
        self,
        x: Tensor,
        mode: str = "infer",
        rng: Optional[np.random.Generator] = None,
        trace: Optional[list] = None,
    ) -> Tensor:
        if x.ndim != 4 or x.shape[1:] != (3, INPUT_HW, INPUT_HW):
            raise ShapeError(
                f"model input must be (N, 3, {INPUT_HW}, {INPUT_HW}), got {x.shape}"
            )

        def mark(name, t):
            if trace is not None:
                trace.append((name, t.shape))

        h = T.relu(self.stem_bn(self.stem_conv(x), mode))
        mark("stem_conv", h)
        h = T.maxpool2d(h, k=3, stride=2)
        mark("stem_pool", h)
        for stage_name, stage in self.stages:
            for block in stage:
                h = block(h, mode)
            mark(stage_name, h)
        h = T.global_avg_pool(h)
        mark("gap", h)
        h = T.relu(self.fc1(h))
        mark("fc1", h)
        h = T.dropout(h, DROPOUT_RATE, mode=mode, rng=rng)
        z = self.fc2(h)
        mark("fc2", z)
        return z

    def forward(
        self,
        x: Tensor,
        mode: str = "infer",
        rng: Optional[np.random.Generator] = None,
        trace: Optional[list] = None,
    ) -> Tensor:
        """Class probabilities, rows summing to 1."""
        return T.softmax(self.logits(x, mode=mode, rng=rng, trace=trace))


def build_model(seed: int = 0, dtype: str = "f32") -> ModelGraph:
    """Fresh model with weights drawn deterministically from ``seed``."""
    return ModelGraph(seed=seed, dtype=dtype)


def parameter_count(model: ModelGraph) -> int:
    """Total element count over trainable parameters."""
    return sum(p.value.size for p in model.parameters())
