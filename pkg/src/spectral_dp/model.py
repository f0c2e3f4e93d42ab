"""Declarative model description and batched forward/backward passes.

A model is an ordered list of layer descriptors, e.g.::

    {"input_shape": [1, 28, 28], "classes": 10,
     "layers": [{"kind": "flatten"},
                {"kind": "bcfc", "out": 2048, "block": 8}, {"kind": "relu"},
                ...]}

Trainable kinds are ``bcfc`` (block-circulant FC, bias-free), ``conv``
(stride 1, bias-free) and ``dense`` (optional bias).  The others are
``relu``, ``tanh``, ``maxpool2``, ``avgpool`` (global spatial mean) and
``flatten``.

Each trainable layer exposes its gradient in one of two *domains*:

``spectral``
    bcfc and conv gradients are the unitary DFT of the signal gradient
    (complex); dense gradients stay real.
``signal``
    every gradient is the ordinary real weight gradient.

Per-sample gradients are reduced to clipped sums without materialising
them where the structure allows (outer-product form of dense and
block-circulant gradients).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import layers as L
from .mechanism import filter1, filter2, ratio_to_k
from .rng import PURPOSE_INIT, NoiseStream
from .spectral import dft1, dft2, idft1, real_part

SPECTRAL = "spectral"
SIGNAL = "signal"

TRAINABLE_KINDS = ("bcfc", "conv", "dense")
ALL_KINDS = TRAINABLE_KINDS + ("relu", "tanh", "maxpool2", "avgpool", "flatten")


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------


class Layer:
    trainable = False
    kind = ""

    def __init__(self, desc: dict, in_shape: tuple):
        self.desc = dict(desc)
        self.in_shape = tuple(in_shape)
        self.out_shape = self._out_shape()

    def _out_shape(self):
        return self.in_shape

    def forward(self, x, params):
        raise NotImplementedError

    def backward(self, dout, cache, params):
        raise NotImplementedError


class Flatten(Layer):
    kind = "flatten"

    def _out_shape(self):
        return (int(np.prod(self.in_shape)),)

    def forward(self, x, params):
        return x.reshape(x.shape[0], -1), None

    def backward(self, dout, cache, params):
        return dout.reshape((dout.shape[0],) + self.in_shape), None


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, params):
        return L.relu_forward(x), x

    def backward(self, dout, cache, params):
        return L.relu_backward(dout, cache), None


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x, params):
        y = L.tanh_forward(x)
        return y, y

    def backward(self, dout, cache, params):
        return L.tanh_backward(dout, cache), None


class MaxPool2(Layer):
    kind = "maxpool2"

    def _out_shape(self):
        if len(self.in_shape) != 3:
            raise ValueError(f"maxpool2 needs a (C, H, W) input, got {self.in_shape}")
        c, h, w = self.in_shape
        return (c, h // 2, w // 2)

    def forward(self, x, params):
        out, arg = L.maxpool2x2_forward(x)
        return out, (arg, x.shape)

    def backward(self, dout, cache, params):
        arg, shape = cache
        return L.maxpool2x2_backward(dout, arg, shape), None


class AvgPool(Layer):
    kind = "avgpool"

    def _out_shape(self):
        if len(self.in_shape) != 3:
            raise ValueError(f"avgpool needs a (C, H, W) input, got {self.in_shape}")
        return (self.in_shape[0],)

    def forward(self, x, params):
        return x.mean(axis=(-2, -1)), None

    def backward(self, dout, cache, params):
        c, h, w = self.in_shape
        return np.broadcast_to(dout[:, :, None, None] / (h * w), dout.shape + (h, w)).copy(), None


class ParamLayer(Layer):
    """Trainable layer.  ``backward`` returns ``(dx, gcache)``; ``gcache``
    feeds the per-sample gradient methods."""

    trainable = True

    def param_shapes(self):
        raise NotImplementedError

    def fan_in(self) -> int:
        raise NotImplementedError

    def init(self, stream: NoiseStream, gain: float):
        std = math.sqrt(gain / self.fan_in())
        g = stream.generator()
        out = []
        for name, shape in self.param_shapes():
            if name == "bias":
                out.append(np.zeros(shape))
            else:
                out.append(std * g.standard_normal(shape))
        return out

    def is_complex(self, domain: str) -> bool:
        return False

    def grad_shapes(self, domain: str):
        return [s for _, s in self.param_shapes()]

    # --- per-sample gradient reductions -------------------------------
    def norms_sq(self, gcache, domain):
        raise NotImplementedError

    def clipped_sum(self, gcache, factors, domain):
        raise NotImplementedError

    def per_sample(self, gcache, domain):
        raise NotImplementedError

    def to_update(self, rep, rho: float, domain: str):
        """Turn a (noisy) summed representation into real parameter gradients."""
        return [np.asarray(r, dtype=np.float64) for r in rep]


class Dense(ParamLayer):
    kind = "dense"

    def _out_shape(self):
        if len(self.in_shape) != 1:
            raise ValueError(f"dense needs a flat input, got {self.in_shape}; add a flatten layer")
        return (int(self.desc["out"]),)

    @property
    def bias(self) -> bool:
        return bool(self.desc.get("bias", True))

    def param_shapes(self):
        shapes = [("weight", (self.out_shape[0], self.in_shape[0]))]
        if self.bias:
            shapes.append(("bias", (self.out_shape[0],)))
        return shapes

    def fan_in(self):
        return self.in_shape[0]

    def forward(self, x, params):
        b = params[1] if self.bias else None
        return L.dense_forward(x, params[0], b), x

    def backward(self, dout, cache, params):
        return dout @ params[0], (dout, cache)

    def norms_sq(self, gcache, domain):
        dout, x = gcache
        extra = 1.0 if self.bias else 0.0
        return np.sum(dout**2, axis=1) * (np.sum(x**2, axis=1) + extra)

    def clipped_sum(self, gcache, factors, domain):
        dout, x = gcache
        cd = dout * factors[:, None]
        out = [cd.T @ x]
        if self.bias:
            out.append(cd.sum(axis=0))
        return out

    def per_sample(self, gcache, domain):
        dout, x = gcache
        out = [dout[:, :, None] * x[:, None, :]]
        if self.bias:
            out.append(dout.copy())
        return out


class BlockCirculant(ParamLayer):
    """Fully connected layer whose ``m x n`` matrix is ``p x q`` circulant blocks."""

    kind = "bcfc"

    def _out_shape(self):
        if len(self.in_shape) != 1:
            raise ValueError(f"bcfc needs a flat input, got {self.in_shape}; add a flatten layer")
        m, n, d = int(self.desc["out"]), self.in_shape[0], int(self.desc["block"])
        if d < 1 or m % d or n % d:
            raise ValueError(f"block size {d} must divide both in={n} and out={m}")
        return (m,)

    @property
    def block(self) -> int:
        return int(self.desc["block"])

    def param_shapes(self):
        d = self.block
        return [("weight", (self.out_shape[0] // d, self.in_shape[0] // d, d))]

    def fan_in(self):
        return self.in_shape[0]

    def is_complex(self, domain):
        return domain == SPECTRAL

    def forward(self, x, params):
        w = params[0]
        p, q, d = w.shape
        x_hat = dft1(x.reshape(-1, q, d))
        w_hat = dft1(w)
        a = real_part(idft1(L.block_fc_forward_hat(x_hat, w_hat))).reshape(-1, p * d)
        return a, (x_hat, w_hat)

    def backward(self, dout, cache, params):
        x_hat, w_hat = cache
        p, q, d = w_hat.shape
        dA_hat = dft1(dout.reshape(-1, p, d))
        dx = real_part(idft1(L.block_fc_input_grad_hat(dA_hat, w_hat))).reshape(-1, q * d)
        return dx, (dA_hat, x_hat)

    def norms_sq(self, gcache, domain):
        dA_hat, x_hat = gcache
        d = x_hat.shape[-1]
        a = np.sum(np.abs(dA_hat) ** 2, axis=1)  # (B, d)
        b = np.sum(np.abs(x_hat) ** 2, axis=1)
        return d * np.sum(a * b, axis=1)

    def clipped_sum(self, gcache, factors, domain):
        dA_hat, x_hat = gcache
        d = x_hat.shape[-1]
        lhs = np.ascontiguousarray(np.conj(dA_hat * factors[:, None, None]).transpose(2, 1, 0))  # (d, p, B)
        rhs = np.ascontiguousarray(x_hat.transpose(2, 0, 1))  # (d, B, q)
        G = np.sqrt(d) * np.matmul(lhs, rhs).transpose(1, 2, 0)  # (p, q, d)
        if domain == SPECTRAL:
            return [G]
        return [real_part(idft1(G))]

    def per_sample(self, gcache, domain):
        dA_hat, x_hat = gcache
        d = x_hat.shape[-1]
        G = np.sqrt(d) * np.conj(dA_hat)[:, :, None, :] * x_hat[:, None, :, :]
        if domain == SPECTRAL:
            return [G]
        return [real_part(idft1(G))]

    def to_update(self, rep, rho, domain):
        if domain == SIGNAL:
            return [np.asarray(rep[0], dtype=np.float64)]
        G = rep[0]
        return [real_part(idft1(filter1(G, ratio_to_k(rho, G.shape[-1]))))]


class Conv2D(ParamLayer):
    kind = "conv"

    def _out_shape(self):
        if len(self.in_shape) != 3:
            raise ValueError(f"conv needs a (C, H, W) input, got {self.in_shape}")
        c, h, w = self.in_shape
        d, pad = self.kernel, self.padding
        ho, wo = h + 2 * pad - d + 1, w + 2 * pad - d + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"kernel {d} too large for input {h}x{w} with padding {pad}")
        return (int(self.desc["out_channels"]), ho, wo)

    @property
    def kernel(self) -> int:
        return int(self.desc.get("kernel", 3))

    @property
    def padding(self) -> int:
        return int(self.desc.get("padding", self.kernel // 2))

    @property
    def grid(self):
        return L.conv_grid_shape(self.in_shape[1:], self.padding)

    def param_shapes(self):
        return [("weight", (self.out_shape[0], self.in_shape[0], self.kernel, self.kernel))]

    def fan_in(self):
        return self.in_shape[0] * self.kernel**2

    def is_complex(self, domain):
        return domain == SPECTRAL

    def grad_shapes(self, domain):
        if domain == SPECTRAL:
            return [(self.out_shape[0], self.in_shape[0]) + tuple(self.grid)]
        return super().grad_shapes(domain)

    def forward(self, x, params):
        return L.conv2d_forward(x, params[0], self.padding), x

    def backward(self, dout, cache, params):
        dx = L.conv2d_input_grad(dout, params[0], self.padding, self.in_shape[1:])
        return dx, (dout, cache)

    def _hats(self, gcache):
        dout, x = gcache
        xp = L._pad_hw(x, self.padding)
        grid = xp.shape[-2:]
        dA_hat = dft2(L.pad_to_grid(dout, grid))
        x_hat = dft2(xp)
        b = x.shape[0]
        return dA_hat.reshape(b, dA_hat.shape[1], -1), x_hat.reshape(b, x_hat.shape[1], -1)

    def norms_sq(self, gcache, domain):
        if domain == SIGNAL:
            g = L.conv2d_weight_grad(*gcache, self.kernel, self.padding)
            return np.sum(g.reshape(g.shape[0], -1) ** 2, axis=1)
        dA_hat, x_hat = self._hats(gcache)
        m = dA_hat.shape[-1]
        a = np.sum(np.abs(dA_hat) ** 2, axis=1)
        b = np.sum(np.abs(x_hat) ** 2, axis=1)
        return m * np.sum(a * b, axis=1)

    def clipped_sum(self, gcache, factors, domain):
        if domain == SIGNAL:
            g = L.conv2d_weight_grad(*gcache, self.kernel, self.padding)
            return [np.tensordot(factors, g, axes=(0, 0))]
        dA_hat, x_hat = self._hats(gcache)
        m = dA_hat.shape[-1]
        lhs = np.ascontiguousarray(np.conj(dA_hat * factors[:, None, None]).transpose(2, 1, 0))  # (M, C_out, B)
        rhs = np.ascontiguousarray(x_hat.transpose(2, 0, 1))  # (M, B, C_in)
        G = np.sqrt(m) * np.matmul(lhs, rhs)  # (M, C_out, C_in)
        G = G.transpose(1, 2, 0).reshape(self.grad_shapes(SPECTRAL)[0])
        return [G]

    def per_sample(self, gcache, domain):
        if domain == SIGNAL:
            return [L.conv2d_weight_grad(*gcache, self.kernel, self.padding)]
        dout, x = gcache
        return [L.conv2d_spectral_weight_grads(dout, x, self.padding)]

    def to_update(self, rep, rho, domain):
        if domain == SIGNAL:
            return [np.asarray(rep[0], dtype=np.float64)]
        G = rep[0]
        k = (ratio_to_k(rho, G.shape[-2]), ratio_to_k(rho, G.shape[-1]))
        return [L.kernel_from_spectral(filter2(G, k), self.kernel)]


_LAYER_TYPES = {
    "flatten": Flatten,
    "relu": ReLU,
    "tanh": Tanh,
    "maxpool2": MaxPool2,
    "avgpool": AvgPool,
    "dense": Dense,
    "bcfc": BlockCirculant,
    "conv": Conv2D,
}


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple
    layers: tuple
    classes: int

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(tuple(d["input_shape"]), tuple(dict(x) for x in d["layers"]), int(d["classes"]))

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [dict(x) for x in self.layers], "classes": self.classes}


def _gain_for(next_desc) -> float:
    return 2.0 if next_desc is not None and next_desc.get("kind") == "relu" else 1.0


class Model:
    """Built, shape-checked model.  Parameters live outside the model, as a
    list (one entry per trainable layer) of lists of arrays."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        shape = tuple(spec.input_shape)
        self.layers = []
        for i, desc in enumerate(spec.layers):
            kind = desc.get("kind")
            if kind not in _LAYER_TYPES:
                raise ValueError(f"layers[{i}]: unknown kind {kind!r}")
            try:
                layer = _LAYER_TYPES[kind](desc, shape)
            except (KeyError, ValueError) as exc:
                raise ValueError(f"layers[{i}] ({kind}): {exc}") from exc
            self.layers.append(layer)
            shape = layer.out_shape
        if shape != (spec.classes,):
            raise ValueError(f"final layer output {shape} does not match {spec.classes} classes")
        self.param_layers = [l for l in self.layers if l.trainable]

    def init_params(self, seed: int):
        params = []
        descs = list(self.spec.layers) + [None]
        for idx, layer in enumerate(self.layers):
            if layer.trainable:
                stream = NoiseStream(seed).child(PURPOSE_INIT, index=len(params))
                params.append(layer.init(stream, _gain_for(descs[idx + 1])))
        return params

    def prepare(self, images) -> np.ndarray:
        """Reshape a stack of ``N x H x W`` images into the model's input shape."""
        x = np.asarray(images, dtype=np.float64)
        return x.reshape((x.shape[0],) + tuple(self.spec.input_shape))

    def forward(self, x, params):
        caches = []
        it = iter(params)
        for layer in self.layers:
            p = next(it) if layer.trainable else None
            x, cache = layer.forward(x, p)
            caches.append((cache, p))
        return x, caches

    def backward(self, dout, caches):
        """Returns the per-trainable-layer gradient caches, in forward order."""
        gcaches = []
        for layer, (cache, p) in zip(reversed(self.layers), reversed(caches)):
            dout, g = layer.backward(dout, cache, p)
            if layer.trainable:
                gcaches.append(g)
        gcaches.reverse()
        return gcaches

    def logits(self, x, params, chunk: int = 512) -> np.ndarray:
        outs = [self.forward(x[s : s + chunk], params)[0] for s in range(0, x.shape[0], chunk)]
        return np.concatenate(outs, axis=0)

    def loss_and_grads(self, images, labels, params, domain: str = SIGNAL):
        """Per-sample losses and materialised per-sample gradients (for tests and small models)."""
        x = self.prepare(images)
        logits, caches = self.forward(x, params)
        loss, dlogits = L.softmax_cross_entropy(logits, np.asarray(labels))
        gcaches = self.backward(dlogits, caches)
        return loss, [layer.per_sample(g, domain) for layer, g in zip(self.param_layers, gcaches)]


def copy_params(params):
    return [[np.array(a, copy=True) for a in group] for group in params]


def model1(block: int = 8, final_block: int = 10, activation: str = "relu", widths=(2048, 1024, 160)) -> ModelSpec:
    """Four-layer block-circulant MLP for 28x28 inputs (784-2048-1024-160-10)."""
    layers = [{"kind": "flatten"}]
    for w in widths:
        layers += [{"kind": "bcfc", "out": w, "block": block}, {"kind": activation}]
    layers.append({"kind": "bcfc", "out": 10, "block": final_block})
    return ModelSpec((1, 28, 28), tuple(layers), 10)


def model1_dense(activation: str = "relu", widths=(2048, 1024, 160)) -> ModelSpec:
    """Uncompressed counterpart of :func:`model1`."""
    layers = [{"kind": "flatten"}]
    for w in widths:
        layers += [{"kind": "dense", "out": w}, {"kind": activation}]
    layers.append({"kind": "dense", "out": 10})
    return ModelSpec((1, 28, 28), tuple(layers), 10)


def blob_mlp(dim: int, classes: int, hidden: int = 16, block: int = 4, activation: str = "tanh") -> ModelSpec:
    """Small block-circulant MLP with a dense head for blob data of width ``dim``."""
    layers = (
        {"kind": "flatten"},
        {"kind": "bcfc", "out": hidden, "block": block},
        {"kind": activation},
        {"kind": "dense", "out": classes},
    )
    return ModelSpec((1, 1, dim), layers, classes)


def small_convnet(channels: int = 4, hw: int = 8, classes: int = 10, in_channels: int = 1) -> ModelSpec:
    """Conv -> tanh -> maxpool -> conv -> tanh -> global average (Model2 in miniature)."""
    layers = (
        {"kind": "conv", "out_channels": channels, "kernel": 3, "padding": 1},
        {"kind": "tanh"},
        {"kind": "maxpool2"},
        {"kind": "conv", "out_channels": classes, "kernel": 3, "padding": 1},
        {"kind": "avgpool"},
    )
    return ModelSpec((in_channels, hw, hw), layers, classes)
