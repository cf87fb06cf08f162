"""Model container: a feature pipeline plus a dense classifier head."""

from __future__ import annotations

import numpy as np

from .layers import Dense, Layer


class Model:
    """Feature layers ending in a flat (N, D) output, then a Dense classifier.

    forward returns logits and an opaque cache; backward consumes the cache
    and yields one gradient per entry of ``params``, in the same order. A
    trained model is treated as immutable and is safe for concurrent
    read-only inference.
    """

    def __init__(self, spec, layers: list[Layer], classifier: Dense, init_seed: int, dtype):
        self.spec = spec
        self.layers = layers
        self.classifier = classifier
        self.init_seed = init_seed
        self.dtype = np.dtype(dtype)

    @property
    def feature_dim(self) -> int:
        return self.classifier.weight.shape[0]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params)
        out.extend(self.classifier.params)
        return out

    @property
    def param_names(self) -> list[str]:
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(f"layers.{i}.{name}" for name in layer.param_names)
        out.extend(f"classifier.{name}" for name in self.classifier.param_names)
        return out

    @property
    def buffers(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.buffers)
        return out

    @property
    def buffer_names(self) -> list[str]:
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(f"layers.{i}.{name}" for name in layer.buffer_names)
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def _check_input(self, x):
        expected = tuple(self.spec.input_shape)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(f"input shape {x.shape} does not match (N, {expected})")

    def forward(self, x, mode: str = "train"):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        self._check_input(x)
        caches = []
        h = x
        for layer in self.layers:
            h, cache = layer.forward(h, mode)
            caches.append(cache)
        logits, cache = self.classifier.forward(h, mode)
        caches.append(cache)
        if not np.isfinite(logits).all():
            raise FloatingPointError("non-finite activation in forward pass")
        return logits, caches

    def backward(self, caches, grad_logits):
        if len(caches) != len(self.layers) + 1:
            raise ValueError("cache does not match this model's layer stack")
        g, grads_cls = self.classifier.backward(caches[-1], grad_logits)
        rev = []
        for layer, cache in zip(reversed(self.layers), reversed(caches[:-1])):
            g, layer_grads = layer.backward(cache, g)
            rev.append(layer_grads)
        grads = []
        for layer_grads in reversed(rev):
            grads.extend(layer_grads)
        grads.extend(grads_cls)
        return grads

    def features(self, x) -> np.ndarray:
        """Penultimate activations (eval mode), the input to the classifier."""
        self._check_input(x)
        h = x
        for layer in self.layers:
            h, _ = layer.forward(h, "eval")
        return h

    def predict(self, x) -> np.ndarray:
        logits, _ = self.forward(x, "eval")
        return logits.argmax(axis=1)
