"""Two-branch regression network: silhouette branch, accelerometer branch,
concatenation and a dense head producing one kcal/min value per sample."""
from __future__ import annotations

import numpy as np

from .layers import Concat, LayerSpec, ShapeError, StateError, build_layer


class Sequential:
    def __init__(self, specs, in_shape, rng, dtype=np.float64, name=""):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in specs]
        self.in_shape = tuple(in_shape)
        self.name = name
        self.layers = []
        self.shapes = [self.in_shape]
        shape = self.in_shape
        for spec in self.specs:
            layer, shape = build_layer(spec, shape, rng, dtype)
            self.layers.append(layer)
            self.shapes.append(shape)
        self.out_shape = shape

    def forward(self, x, record=None):
        """Run all layers; ``record`` (a list) collects each layer's input."""
        return self.forward_from(0, x, record)

    def forward_from(self, start, x, record=None):
        for layer in self.layers[start:]:
            if record is not None:
                record.append(x)
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def named_layers(self):
        for i, layer in enumerate(self.layers):
            yield f"{self.name}.{i}.{layer.kind}", layer


class Model:
    """Silhouette and/or accelerometer branch feeding a dense head.

    ``spec`` is a plain dict (JSON-serialisable)::

        {"silhouette": {"input": [H, W, C], "layers": [...]} or None,
         "accel": {"input": [L, 6], "layers": [...]} or None,
         "head": [...layer dicts ending in a 1-unit dense...],
         "dtype": "float64"}

    Branch outputs are flattened and concatenated in the order silhouette,
    accelerometer before entering the head.
    """

    def __init__(self, spec: dict, seed: int = 0):
        self.spec = spec
        self.seed = int(seed)
        self.dtype = np.dtype(spec.get("dtype", "float64"))
        rng = np.random.default_rng(self.seed)
        self.sil = self.acc = None
        widths = []
        if spec.get("silhouette"):
            h, w, c = spec["silhouette"]["input"]
            layers = list(spec["silhouette"]["layers"]) + [{"kind": "flatten"}]
            self.sil = Sequential(layers, (c, h, w), rng, self.dtype, "silhouette")
            widths.append(self.sil.out_shape[0])
        if spec.get("accel"):
            n, c = spec["accel"]["input"]
            layers = list(spec["accel"]["layers"]) + [{"kind": "flatten"}]
            self.acc = Sequential(layers, (c, n), rng, self.dtype, "accel")
            widths.append(self.acc.out_shape[0])
        if not widths:
            raise ValueError("model needs at least one branch")
        self.concat = Concat()
        self.fusion_width = sum(widths)
        self.head = Sequential(spec["head"], (self.fusion_width,), rng, self.dtype, "head")
        if self.head.out_shape != (1,):
            raise ShapeError(f"head must end in a single unit, got {self.head.out_shape}")
        self._ran = False

    @property
    def silhouette_shape(self):
        return tuple(self.spec["silhouette"]["input"]) if self.sil else None

    @property
    def accel_shape(self):
        return tuple(self.spec["accel"]["input"]) if self.acc else None

    def _check(self, name, x, expected):
        if expected is None:
            if x is not None:
                raise ShapeError(f"model has no {name} branch but a {name} input was given")
            return None
        if x is None:
            raise ShapeError(f"model requires a {name} input of shape {expected}")
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == len(expected):
            x = x[None]
        if tuple(x.shape[1:]) != expected:
            raise ShapeError(f"{name} input: expected {expected}, got {tuple(x.shape[1:])}")
        return x

    def forward(self, silhouette=None, accel=None):
        """Batched prediction; inputs are ``(B, H, W, C)`` and ``(B, L, 6)``.

        Unbatched inputs are accepted and yield a length-1 result.
        """
        s = self._check("silhouette", silhouette, self.silhouette_shape)
        a = self._check("accel", accel, self.accel_shape)
        feats = []
        if s is not None:
            feats.append(self.sil.forward(np.ascontiguousarray(s.transpose(0, 3, 1, 2))))
        if a is not None:
            feats.append(self.acc.forward(np.ascontiguousarray(a.transpose(0, 2, 1))))
        if s is not None and a is not None and len(s) != len(a):
            raise ShapeError("silhouette and accel batches differ in size")
        out = self.head.forward(self.concat.forward(feats))
        self._ran = True
        return out[:, 0]

    def predict(self, silhouette=None, accel=None) -> float:
        return float(self.forward(silhouette, accel)[0])

    def backward(self, dpred):
        """Backpropagate d(loss)/d(prediction); returns input gradients."""
        if not self._ran:
            raise StateError("backward called before forward")
        dpred = np.asarray(dpred, dtype=self.dtype).reshape(-1, 1)
        parts = self.concat.backward(self.head.backward(dpred))
        grads = {}
        i = 0
        if self.sil is not None:
            grads["silhouette"] = self.sil.backward(parts[i]).transpose(0, 2, 3, 1)
            i += 1
        if self.acc is not None:
            grads["accel"] = self.acc.backward(parts[i]).transpose(0, 2, 1)
        return grads

    def named_layers(self):
        for branch in (self.sil, self.acc):
            if branch is not None:
                yield from branch.named_layers()
        yield "fusion.concat", self.concat
        yield from self.head.named_layers()

    def parameters(self):
        """``{name: (param, grad_owner_layer, key)}`` in a stable order."""
        out = {}
        for lname, layer in self.named_layers():
            for key in layer.params:
                out[f"{lname}.{key}"] = (layer, key)
        return out

    def get_params(self) -> dict:
        return {n: layer.params[k] for n, (layer, k) in self.parameters().items()}

    def get_grads(self) -> dict:
        return {n: layer.grads[k] for n, (layer, k) in self.parameters().items()}

    def set_params(self, values: dict) -> None:
        for n, (layer, k) in self.parameters().items():
            v = np.asarray(values[n], dtype=self.dtype)
            if v.shape != layer.params[k].shape:
                raise ShapeError(f"{n}: expected {layer.params[k].shape}, got {v.shape}")
            layer.params[k] = v.copy()

    def copy_params(self) -> dict:
        return {n: v.copy() for n, v in self.get_params().items()}

    def n_params(self) -> int:
        return sum(v.size for v in self.get_params().values())
