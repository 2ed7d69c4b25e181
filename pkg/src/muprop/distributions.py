"""Discrete sampling layers parameterized by logits.

Both layers expose the same four operations: `mean`, `sample`, `log_prob`, and
`score` (the gradient of the log-density with respect to the logits, which has
the closed form value - mean for both families). Logits are the only
parameterization; probabilities never appear in interfaces.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_tensor, logsumexp, sigmoid, softmax, softplus


@dataclass(frozen=True)
class BernoulliLayer:
    """Vector of independent binary units, P(x_i = 1) = sigmoid(logits_i)."""

    logits: np.ndarray  # shape [n]

    def mean(self) -> np.ndarray:
        return sigmoid(self.logits)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(self.logits.shape)
        return (u < self.mean()).astype(np.float64)

    def validate(self, value: np.ndarray) -> np.ndarray:
        value = as_tensor(value)
        if value.shape != self.logits.shape:
            raise ValueError(
                f"value shape {value.shape} != logits shape {self.logits.shape}"
            )
        if not np.all((value == 0.0) | (value == 1.0)):
            raise ValueError("binary layer value must be exactly 0/1")
        return value

    def log_prob(self, value: np.ndarray, checked: bool = False) -> float:
        if not checked:
            value = self.validate(value)
        # sum of v*log(m) + (1-v)*log(1-m), folded into one softplus per unit
        return float(-np.sum(softplus((1.0 - 2.0 * value) * self.logits)))

    def score(self, value: np.ndarray, checked: bool = False) -> np.ndarray:
        if not checked:
            value = self.validate(value)
        return value - self.mean()

    def support_size(self) -> int:
        return 2 ** self.logits.size

    def enumerate_support(self):
        n = self.logits.size
        for code in range(2**n):
            bits = (code >> np.arange(n)) & 1
            yield bits.astype(np.float64)


@dataclass(frozen=True)
class CategoricalLayer:
    """Rows of independent k-way units; values are one-hot rows.

    P(unit u takes category j) = softmax(logits[u])_j. Sampling inverts the
    per-row CDF so a single uniform draw per unit decides the category.
    """

    logits: np.ndarray  # shape [u, k]

    def mean(self) -> np.ndarray:
        return softmax(self.logits, axis=-1)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        probs = self.mean()
        cdf = np.cumsum(probs, axis=-1)
        r = rng.random((self.logits.shape[0], 1))
        idx = np.minimum((cdf <= r).sum(axis=-1), self.logits.shape[1] - 1)
        return np.eye(self.logits.shape[1])[idx]

    def validate(self, value: np.ndarray) -> np.ndarray:
        value = as_tensor(value)
        if value.shape != self.logits.shape:
            raise ValueError(
                f"value shape {value.shape} != logits shape {self.logits.shape}"
            )
        one_hot = np.all((value == 0.0) | (value == 1.0)) and np.all(
            value.sum(axis=-1) == 1.0
        )
        if not one_hot:
            raise ValueError("categorical layer value must be one-hot rows")
        return value

    def log_prob(self, value: np.ndarray, checked: bool = False) -> float:
        if not checked:
            value = self.validate(value)
        picked = np.sum(self.logits * value, axis=-1)
        return float(np.sum(picked - logsumexp(self.logits, axis=-1)))

    def score(self, value: np.ndarray, checked: bool = False) -> np.ndarray:
        if not checked:
            value = self.validate(value)
        return value - self.mean()

    def support_size(self) -> int:
        u, k = self.logits.shape
        return k**u

    def enumerate_support(self):
        u, k = self.logits.shape
        eye = np.eye(k)
        idx = np.zeros(u, dtype=np.int64)
        while True:
            yield eye[idx].copy()
            pos = 0
            while pos < u:
                idx[pos] += 1
                if idx[pos] < k:
                    break
                idx[pos] = 0
                pos += 1
            if pos == u:
                return
