"""Network definitions built from a declarative, JSON-serialisable layer list.

``build_conv5`` gives the five-layer 1-D CNN for raw I/Q frames;
``build_image_cnn`` a small residual CNN for 2xWxW images, optionally
preceded by a learnable convolutional transform so it can eat raw frames.
"""

from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .functional import ShapeError, conv_output_len
from .tensor import Parameter, Tensor
from .transforms import CtConfig, conv_transform

CONV5_WIDTHS = (64, 64, 128, 128, 256)
IMAGE_CNN_WIDTHS = (16, 32, 64)
IMAGE_SIZES = (28, 32, 224, 256)
# trainable-parameter total reported for the original CONV-5
REFERENCE_CONV5_PARAMS = 5_067_019


@dataclass
class ModelSpec:
    name: str
    input_shape: Tuple[int, ...]
    n_classes: int
    layers: List[dict]
    input_norm: str = "power"  # per-frame unit average power, or "none"
    input_scale: float = 1.0

    def to_json(self) -> str:
        d = {"name": self.name, "input_shape": list(self.input_shape), "n_classes": self.n_classes,
             "layers": self.layers, "input_norm": self.input_norm, "input_scale": self.input_scale}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        d = json.loads(text)
        return cls(d["name"], tuple(d["input_shape"]), d["n_classes"], d["layers"], d.get("input_norm", "power"),
                   d.get("input_scale", 1.0))

    def shapes(self) -> List[Tuple[int, ...]]:
        """Per-sample shape after each layer; raises if the chain is inconsistent."""
        shape = tuple(self.input_shape)
        out = [shape]
        for i, layer in enumerate(self.layers):
            try:
                shape = _out_shape(layer, shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer['kind']}): {e}") from None
            out.append(shape)
        if out[-1] != (self.n_classes,):
            raise ShapeError(f"final layer yields {out[-1]}, expected ({self.n_classes},)")
        return out


def _out_shape(layer: dict, s: Tuple[int, ...]) -> Tuple[int, ...]:
    k = layer["kind"]
    if k == "conv1d":
        if len(s) != 2 or s[0] != layer["c_in"]:
            raise ShapeError(f"expects ({layer['c_in']}, L), got {s}")
        L = conv_output_len(s[1], layer["k"], layer["stride"], layer["padding"])
        return (layer["c_out"], L)
    if k in ("conv2d", "residual"):
        c_in = layer["c_in"] if k == "conv2d" else layer["channels"]
        c_out = layer["c_out"] if k == "conv2d" else layer["channels"]
        if len(s) != 3 or s[0] != c_in:
            raise ShapeError(f"expects ({c_in}, H, W), got {s}")
        if k == "residual":
            return s
        st, p, kk = layer["stride"], layer["padding"], layer["k"]
        return (c_out, conv_output_len(s[1], kk, st, p), conv_output_len(s[2], kk, st, p))
    if k in ("relu", "norm"):
        return s
    if k == "maxpool1d":
        if s[-1] % layer["pool"]:
            raise ShapeError(f"length {s[-1]} not divisible by pool {layer['pool']}")
        return (*s[:-1], s[-1] // layer["pool"])
    if k == "maxpool2d":
        if len(s) != 3 or s[1] % layer["ph"] or s[2] % layer["pw"]:
            raise ShapeError(f"{s} not divisible by pool ({layer['ph']},{layer['pw']})")
        return (s[0], s[1] // layer["ph"], s[2] // layer["pw"])
    if k == "flatten":
        return (int(np.prod(s)),)
    if k == "gap":
        if len(s) != 3:
            raise ShapeError(f"expects (C, H, W), got {s}")
        return (s[0],)
    if k == "gap1d":
        if len(s) != 2:
            raise ShapeError(f"expects (C, L), got {s}")
        return (s[0],)
    if k == "dense":
        if s != (layer["d_in"],):
            raise ShapeError(f"expects ({layer['d_in']},), got {s}")
        return (layer["d_out"],)
    if k == "conv_transform":
        if len(s) != 2 or s[0] != 2 or s[1] % 4:
            raise ShapeError(f"expects (2, N) with N divisible by 4, got {s}")
        return (2, layer["filters"], s[1] // 4)
    raise ShapeError(f"unknown layer kind {k!r}")


def _param_shapes(layer: dict) -> List[Tuple[str, Tuple[int, ...], int]]:
    """(suffix, shape, fan_in) for each parameter of a layer; fan_in 0 marks a bias."""
    k = layer["kind"]
    if k == "conv1d":
        fan = layer["c_in"] * layer["k"]
        return [("weight", (layer["c_out"], layer["c_in"], layer["k"]), fan), ("bias", (layer["c_out"],), 0)]
    if k == "conv2d":
        fan = layer["c_in"] * layer["k"] ** 2
        return [("weight", (layer["c_out"], layer["c_in"], layer["k"], layer["k"]), fan), ("bias", (layer["c_out"],), 0)]
    if k == "residual":
        c, kk = layer["channels"], layer["k"]
        fan = c * kk * kk
        return [("conv1.weight", (c, c, kk, kk), fan), ("conv1.bias", (c,), 0),
                ("conv2.weight", (c, c, kk, kk), fan), ("conv2.bias", (c,), 0)]
    if k == "dense":
        return [("weight", (layer["d_out"], layer["d_in"]), layer["d_in"]), ("bias", (layer["d_out"],), 0)]
    if k == "conv_transform":
        return [("weight", (layer["filters"], 1, 3, 3), 9), ("bias", (layer["filters"],), 0)]
    return []


class Model:
    def __init__(self, spec: ModelSpec, params: Dict[str, Parameter]):
        self.spec = spec
        self.params = params

    @property
    def parameters(self) -> List[Parameter]:
        return list(self.params.values())

    def trainable(self) -> List[Parameter]:
        return [p for p in self.params.values() if p.requires_grad]

    def n_params(self, trainable_only: bool = True) -> int:
        ps = self.trainable() if trainable_only else self.parameters
        return int(sum(p.data.size for p in ps))

    def astype(self, dtype) -> "Model":
        params = {}
        for name, p in self.params.items():
            q = Parameter(p.data.astype(dtype), name=name)
            q.requires_grad = p.requires_grad
            params[name] = q
        return Model(self.spec, params)

    def copy(self) -> "Model":
        return self.astype(self.dtype)

    @property
    def dtype(self):
        return next(iter(self.params.values())).data.dtype

    def prepare(self, x) -> np.ndarray:
        """Non-differentiable input conditioning applied before :meth:`forward`."""
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise ShapeError(f"batch geometry {x.shape[1:]} does not match model input {tuple(self.spec.input_shape)}")
        x = x.astype(self.dtype, copy=False)
        if self.spec.input_norm == "power":
            axes = tuple(range(2, x.ndim))
            p = np.mean(np.sum(x.astype(np.float64) ** 2, axis=1, keepdims=True), axis=axes, keepdims=True)
            x = x / np.sqrt(np.maximum(p, 1e-30))
        if self.spec.input_scale != 1.0:
            x = x * self.spec.input_scale
        return x.astype(self.dtype, copy=False)

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.spec.layers):
            x = _apply(layer, x, self.params, f"l{i}")
        return x

    __call__ = forward


def _apply(layer: dict, x: Tensor, P: Dict[str, Parameter], pre: str) -> Tensor:
    k = layer["kind"]
    if k == "conv1d":
        return T.conv1d(x, P[f"{pre}.weight"], P[f"{pre}.bias"], layer["stride"], layer["padding"])
    if k == "conv2d":
        return T.conv2d(x, P[f"{pre}.weight"], P[f"{pre}.bias"], layer["stride"], layer["padding"])
    if k == "residual":
        p = layer["k"] // 2
        if layer.get("preact", False):
            # norm -> relu -> conv, twice, on the branch only
            h = T.conv2d(T.relu(T.layer_norm(x)), P[f"{pre}.conv1.weight"], P[f"{pre}.conv1.bias"], 1, p)
            h = T.conv2d(T.relu(T.layer_norm(h)), P[f"{pre}.conv2.weight"], P[f"{pre}.conv2.bias"], 1, p)
        else:
            h = T.relu(T.conv2d(x, P[f"{pre}.conv1.weight"], P[f"{pre}.conv1.bias"], 1, p))
            h = T.conv2d(h, P[f"{pre}.conv2.weight"], P[f"{pre}.conv2.bias"], 1, p)
        return T.add(x, h)
    if k == "relu":
        return T.relu(x)
    if k == "norm":
        return T.layer_norm(x)
    if k == "maxpool1d":
        return T.maxpool1d(x, layer["pool"])
    if k == "maxpool2d":
        return T.maxpool2d(x, layer["ph"], layer["pw"])
    if k == "flatten":
        return T.flatten(x)
    if k == "gap":
        return T.global_avg_pool(x)
    if k == "gap1d":
        return T.global_avg_pool1d(x)
    if k == "dense":
        return T.dense(x, P[f"{pre}.weight"], P[f"{pre}.bias"])
    if k == "conv_transform":
        cfg = CtConfig(filters=layer["filters"], learnable=layer.get("learnable", True))
        return conv_transform(x, cfg, P[f"{pre}.weight"], P[f"{pre}.bias"])
    raise ShapeError(f"unknown layer kind {k!r}")


def build(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    """Validate the shape chain and initialise parameters.

    Weights are uniform on +-sqrt(6/fan_in); biases start at zero. A layer may
    carry ``init_scale`` to shrink its weights (used on residual branches).
    """
    spec.shapes()
    rng = np.random.default_rng(seed)
    params: Dict[str, Parameter] = {}
    for i, layer in enumerate(spec.layers):
        frozen = layer["kind"] == "conv_transform" and not layer.get("learnable", True)
        for suffix, shape, fan_in in _param_shapes(layer):
            name = f"l{i}.{suffix}"
            if fan_in:
                bound = math.sqrt(6.0 / fan_in)
                if layer["kind"] == "residual" and suffix.startswith("conv2"):
                    bound *= layer.get("init_scale", 1.0)
                data = rng.uniform(-bound, bound, size=shape)
            else:
                data = np.zeros(shape)
            p = Parameter(data.astype(dtype), name=name)
            if frozen:
                p.requires_grad = False
            params[name] = p
    return Model(spec, params)


def conv5_spec(n_samples: int, n_classes: int, widths: Sequence[int] = CONV5_WIDTHS, head: str = "gap") -> ModelSpec:
    if len(widths) != 5:
        raise ValueError(f"CONV-5 needs exactly 5 widths, got {len(widths)}")
    if n_samples % 2**5:
        raise ShapeError(f"n_samples ({n_samples}) must be divisible by 32 for five factor-2 poolings")
    layers: List[dict] = []
    c_in = 2
    for c in widths:
        layers += [dict(kind="conv1d", c_in=c_in, c_out=int(c), k=3, stride=1, padding=1),
                   dict(kind="relu"), dict(kind="maxpool1d", pool=2)]
        c_in = int(c)
    if head == "flatten":
        layers += [dict(kind="flatten"), dict(kind="dense", d_in=c_in * (n_samples // 32), d_out=n_classes)]
    elif head == "gap":
        layers += [dict(kind="gap1d"), dict(kind="dense", d_in=c_in, d_out=n_classes)]
    else:
        raise ValueError(f"unknown head {head!r}")
    return ModelSpec("conv5", (2, n_samples), n_classes, layers)


def build_conv5(n_samples: int, n_classes: int, widths: Sequence[int] = CONV5_WIDTHS,
                head: str = "gap", seed: int = 0, dtype=np.float32) -> Model:
    return build(conv5_spec(n_samples, n_classes, widths, head), seed, dtype)


def conv5_param_count(n_samples: int, n_classes: int, widths: Sequence[int] = CONV5_WIDTHS, head: str = "gap") -> int:
    """Closed-form trainable-parameter count of :func:`build_conv5`."""
    chans = [2, *widths]
    conv = sum(ci * co * 3 + co for ci, co in zip(chans[:-1], chans[1:]))
    features = widths[-1] * (n_samples // 32 if head == "flatten" else 1)
    return conv + features * n_classes + n_classes


def image_cnn_spec(input_size: int, n_classes: int, widths: Sequence[int] = IMAGE_CNN_WIDTHS,
                   ct_samples: Optional[int] = None, ct_learnable: bool = True,
                   residual_init_scale: float = 0.0) -> ModelSpec:
    """Pre-activation residual CNN: three stages of [conv3x3, residual, residual]
    with 2x2 pooling, norm and relu between stages, then norm, relu, global
    average pooling and a dense head. Residual branches are norm-relu-conv twice;
    "norm" is a parameter-free per-sample layer normalisation.

    With ``ct_samples`` the model takes raw (2, ct_samples) frames and applies a
    convolutional transform with ``ct_samples / 4`` filters first.
    """
    if input_size not in IMAGE_SIZES:
        raise ShapeError(f"image size {input_size} not supported; choose from {IMAGE_SIZES}")
    layers: List[dict] = []
    if ct_samples is not None:
        if ct_samples // 4 != input_size or ct_samples % 4:
            raise ShapeError(f"CT of {ct_samples} samples yields width {ct_samples // 4}, not {input_size}")
        layers.append(dict(kind="conv_transform", filters=input_size, learnable=ct_learnable))
        input_shape: Tuple[int, ...] = (2, ct_samples)
    else:
        input_shape = (2, input_size, input_size)
    c_in = 2
    for s, c in enumerate(widths):
        if s > 0:
            layers += [dict(kind="maxpool2d", ph=2, pw=2), dict(kind="norm"), dict(kind="relu")]
        layers.append(dict(kind="conv2d", c_in=c_in, c_out=int(c), k=3, stride=1, padding=1))
        layers += [dict(kind="residual", channels=int(c), k=3, preact=True, init_scale=residual_init_scale)
                   for _ in range(2)]
        c_in = int(c)
    layers += [dict(kind="norm"), dict(kind="relu"), dict(kind="gap"), dict(kind="dense", d_in=c_in, d_out=n_classes)]
    name = "ct_imagecnn" if ct_samples is not None else "imagecnn"
    return ModelSpec(name, input_shape, n_classes, layers)


def build_image_cnn(input_size: int, n_classes: int, widths: Sequence[int] = IMAGE_CNN_WIDTHS,
                    ct_samples: Optional[int] = None, ct_learnable: bool = True,
                    residual_init_scale: float = 0.0, seed: int = 0, dtype=np.float32) -> Model:
    spec = image_cnn_spec(input_size, n_classes, widths, ct_samples, ct_learnable, residual_init_scale)
    return build(spec, seed, dtype)


def predict(model: Model, batch) -> Tuple[np.ndarray, np.ndarray]:
    """Logits and argmax labels (ties go to the lowest class index)."""
    x = Tensor(model.prepare(batch))
    with T.no_grad():
        logits = model.forward(x).data
    return logits, logits.argmax(axis=1)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"IQCK0001"
CKPT_HEADER = struct.Struct("<8sIII")


def save_checkpoint(model: Model, path, meta: Optional[dict] = None) -> None:
    """Header, model spec JSON, then a named f32 parameter table (little-endian)."""
    spec = model.spec.to_json().encode("utf-8")
    meta_raw = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_HEADER.pack(CKPT_MAGIC, 1, len(spec), len(model.params)))
        fh.write(spec)
        fh.write(struct.pack("<I", len(meta_raw)))
        fh.write(meta_raw)
        for name, p in model.params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack(f"<BI{p.data.ndim}I", int(p.requires_grad), p.data.ndim, *p.data.shape))
            fh.write(p.data.astype("<f4").tobytes())


def load_checkpoint(path) -> Tuple[Model, dict]:
    raw = Path(path).read_bytes()
    pos = CKPT_HEADER.size
    if len(raw) < pos:
        raise ValueError(f"checkpoint {path} is truncated")
    magic, version, spec_len, n_params = CKPT_HEADER.unpack_from(raw, 0)
    if magic != CKPT_MAGIC or version != 1:
        raise ValueError(f"not a checkpoint file (magic {magic!r}, version {version})")
    spec = ModelSpec.from_json(raw[pos : pos + spec_len].decode("utf-8"))
    pos += spec_len
    (meta_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    meta = json.loads(raw[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    params: Dict[str, Parameter] = {}
    for _ in range(n_params):
        (ln,) = struct.unpack_from("<H", raw, pos)
        name = raw[pos + 2 : pos + 2 + ln].decode("utf-8")
        pos += 2 + ln
        req, ndim = struct.unpack_from("<BI", raw, pos)
        pos += 5
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(shape))
        data = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * size
        p = Parameter(data, name=name)
        p.requires_grad = bool(req)
        params[name] = p
    model = Model(spec, params)
    spec.shapes()
    return model, meta
