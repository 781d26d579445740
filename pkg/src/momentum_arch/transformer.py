"""Small causal transformer for the autoregressive copy task.

Each layer computes multi-head attention V̂ from its input X, then
T(X) = f(V̂ + X + β̃ (X − X_prev)) where X_prev is the previous layer's input
(X itself for the first layer) and f(u) = u + W2 tanh(W1 u + b1) + b2 is a
position-wise residual feedforward block. With β̃ = 0 this is the usual
residual connection.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import AttnHyper, adaptive_momentum, attention_tape, momentum_connection
from .autodiff import Tape, Tensor

VARIANTS = ("softmax", "linear", "momentum", "adaptive")


def sinusoidal_encoding(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class CopyTransformer:
    variant: str
    vocab: int = 11
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    max_len: int = 32
    hyper: AttnHyper = field(default_factory=AttnHyper)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.variant in ("softmax", "linear"):
            self.hyper = AttnHyper(gamma=1.0, beta=0.0, beta_conn=0.0, delta=self.hyper.delta)
        self.beta_conn = self.hyper.beta_conn
        self._pe = sinusoidal_encoding(self.max_len, self.d_model)
        self._prev_grad: np.ndarray | None = None

    @property
    def attention_kind(self) -> str:
        return {"softmax": "softmax", "linear": "linear"}.get(self.variant, "momentum")

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        D, F, V = self.d_model, self.d_ff, self.vocab

        def dense(rows, cols):
            return rng.uniform(-1.0, 1.0, size=(rows, cols)) / np.sqrt(cols)

        p = {"E": rng.normal(0.0, 1.0, size=(V, D))}
        for layer in range(self.n_layers):
            for name in ("Wq", "Wk", "Wv", "Wo"):
                p[f"{name}{layer}"] = dense(D, D)
            p[f"W1_{layer}"] = dense(F, D)
            p[f"b1_{layer}"] = np.zeros(F)
            p[f"W2_{layer}"] = dense(D, F)
            p[f"b2_{layer}"] = np.zeros(D)
        p["Wout"] = dense(V, D)
        p["bout"] = np.zeros(V)
        return p

    def _heads(self, x: Tensor, B: int, N: int) -> Tensor:
        dh = self.d_model // self.n_heads
        return ad.transpose(ad.reshape(x, (B, N, self.n_heads, dh)), (0, 2, 1, 3))

    def logits(self, p, tokens: np.ndarray) -> Tensor:
        tokens = np.asarray(tokens)
        B, N = tokens.shape
        if N > self.max_len:
            raise ValueError(f"sequence length {N} exceeds max_len {self.max_len}")
        onehot = np.eye(self.vocab)[tokens]
        X = ad.add(ad.matmul(onehot, p["E"]), self._pe[:N])
        prev = X
        for layer in range(self.n_layers):
            q = self._heads(ad.matmul(X, ad.transpose(p[f"Wq{layer}"])), B, N)
            k = self._heads(ad.matmul(X, ad.transpose(p[f"Wk{layer}"])), B, N)
            v = self._heads(ad.matmul(X, ad.transpose(p[f"Wv{layer}"])), B, N)
            att = attention_tape(q, k, v, self.attention_kind, self.hyper)
            merged = ad.reshape(ad.transpose(att, (0, 2, 1, 3)), (B, N, self.d_model))
            v_hat = ad.matmul(merged, ad.transpose(p[f"Wo{layer}"]))

            def ff(u, layer=layer):
                hidden = ad.tanh(ad.add(ad.matmul(u, ad.transpose(p[f"W1_{layer}"])), p[f"b1_{layer}"]))
                return ad.add(u, ad.add(ad.matmul(hidden, ad.transpose(p[f"W2_{layer}"])), p[f"b2_{layer}"]))

            X, prev = momentum_connection(X, v_hat, prev, self.beta_conn, ff), X
        return ad.add(ad.matmul(X, ad.transpose(p["Wout"])), p["bout"])

    def loss(self, p, tokens, targets, mask) -> Tensor:
        return ad.cross_entropy_loss(self.logits(p, tokens), np.asarray(targets),
                                     np.asarray(mask, dtype=np.float64))

    def gradients(self, params, tokens, targets, mask) -> tuple[float, dict[str, np.ndarray], float]:
        """Loss, parameter gradients and masked token accuracy for one batch."""
        tape = Tape()
        p = {k: tape.param(k, v) for k, v in params.items()}
        logits = self.logits(p, tokens)
        L = ad.cross_entropy_loss(logits, np.asarray(targets), np.asarray(mask, dtype=np.float64))
        grads = ad.backward(tape, L)
        hit = (np.argmax(logits.data, axis=-1) == targets) & mask
        acc = float(hit.sum() / max(mask.sum(), 1))
        return L.item(), dict(grads), acc

    def update_adaptive(self, grads: dict[str, np.ndarray]) -> float:
        """Refresh β̃ from consecutive training gradients (adaptive variant only)."""
        if self.variant != "adaptive":
            return self.beta_conn
        flat = np.concatenate([np.ravel(grads[k]) for k in sorted(grads)])
        if self._prev_grad is not None:
            self.beta_conn = adaptive_momentum(flat, self._prev_grad, self.hyper.delta, self.beta_conn)
        self._prev_grad = flat
        return self.beta_conn
