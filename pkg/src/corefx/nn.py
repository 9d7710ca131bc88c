"""Small fully connected scoring networks with explicit backprop.

Each net maps a batch of feature rows to one scalar score per row through
rectifier hidden layers.  Forward passes return a cache that the backward
pass consumes; gradients are plain arrays shaped like the weights.
"""

from __future__ import annotations

import numpy as np

__all__ = ["FeedForwardNet", "uniform_init"]

INIT_SCALE = 0.1


def uniform_init(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


class FeedForwardNet:
    """Rectifier MLP with a scalar output head.

    weights[i] has shape (fan_in, fan_out); hidden activations are
    max(0, .) and the final layer is linear with fan_out 1.
    """

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("weights and biases must be non-empty and aligned")
        for i in range(len(weights) - 1):
            if weights[i].shape[1] != weights[i + 1].shape[0]:
                raise ValueError("layer shapes do not chain")
        if weights[-1].shape[1] != 1:
            raise ValueError("output head must produce a scalar")
        self.weights = weights
        self.biases = biases

    @classmethod
    def create(
        cls, in_dim: int, hidden_sizes: tuple[int, ...], rng: np.random.Generator
    ) -> "FeedForwardNet":
        dims = [in_dim, *hidden_sizes, 1]
        weights = [uniform_init(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        biases = [uniform_init(rng, dims[i + 1]) for i in range(len(dims) - 1)]
        return cls(weights, biases)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Score a batch of rows; returns (scores [B], cache)."""
        cache = []
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            pre = h @ w + b
            cache.append((h, pre))
            h = np.maximum(pre, 0.0)
        cache.append((h, None))
        scores = h @ self.weights[-1] + self.biases[-1]
        return scores[:, 0], cache

    def backward(
        self, cache: list, dscores: np.ndarray
    ) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
        """Backprop dscores [B]; returns (dx, dweights, dbiases)."""
        d_out = dscores[:, None]
        h_last = cache[-1][0]
        dws: list[np.ndarray] = [h_last.T @ d_out]
        dbs: list[np.ndarray] = [d_out.sum(axis=0)]
        dh = d_out @ self.weights[-1].T
        for (h_in, pre), w in zip(reversed(cache[:-1]), reversed(self.weights[:-1])):
            dpre = dh * (pre > 0.0)
            dws.append(h_in.T @ dpre)
            dbs.append(dpre.sum(axis=0))
            dh = dpre @ w.T
        dws.reverse()
        dbs.reverse()
        return dh, dws, dbs

    def hidden_preactivations(self, x: np.ndarray) -> list[np.ndarray]:
        """Pre-rectifier values per hidden layer, for smoothness guards."""
        pres = []
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            pre = h @ w + b
            pres.append(pre)
            h = np.maximum(pre, 0.0)
        return pres

    def copy(self) -> "FeedForwardNet":
        return FeedForwardNet(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )
