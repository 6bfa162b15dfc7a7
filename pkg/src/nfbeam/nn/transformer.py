"""Pre-norm transformer blocks with causal multi-head self-attention."""

from __future__ import annotations

import numpy as np

from ..errors import TrainingError
from .layers import Context, Dropout, Layer, LayerNorm, Linear


def softmax_last(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class MultiHeadAttention(Layer):
    """Scaled dot-product attention over N_h heads of width d_emb / N_h.

    With the causal flag, position p attends only to positions <= p; the
    masked logits are -inf so masked probabilities are exactly zero.
    """

    def __init__(self, d_emb, n_heads, dropout, causal, *, rng, std=0.02, dtype=np.float64):
        if d_emb % n_heads:
            raise TrainingError("d_emb must be divisible by n_heads")
        self.n_heads = n_heads
        self.d_head = d_emb // n_heads
        self.causal = causal
        self.wq = Linear(d_emb, d_emb, rng=rng, std=std, dtype=dtype)
        self.wk = Linear(d_emb, d_emb, rng=rng, std=std, dtype=dtype)
        self.wv = Linear(d_emb, d_emb, rng=rng, std=std, dtype=dtype)
        self.wo = Linear(d_emb, d_emb, rng=rng, std=std, dtype=dtype)
        self.attn_drop = Dropout(dropout)
        self.cache = None

    def _sub(self):
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo}

    def params(self):
        return {
            f"{name}.{k}": v for name, lay in self._sub().items() for k, v in lay.params().items()
        }

    def grads(self):
        return {
            f"{name}.{k}": v for name, lay in self._sub().items() for k, v in lay.grads().items()
        }

    def _split(self, x):
        b, p, _ = x.shape
        return x.reshape(b, p, self.n_heads, self.d_head).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, h, p, d = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, p, h * d)

    def attention_probs(self, z: np.ndarray) -> np.ndarray:
        """Eval-mode attention probabilities, shape (B, heads, P, P)."""
        ctx = Context(train=False)
        q = self._split(self.wq.forward(z, ctx))
        k = self._split(self.wk.forward(z, ctx))
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(self.d_head)
        if self.causal:
            p = z.shape[1]
            mask = np.triu(np.ones((p, p), dtype=bool), k=1)
            scores = np.where(mask, -np.inf, scores)
        return softmax_last(scores)

    def forward(self, z, ctx: Context):
        q = self._split(self.wq.forward(z, ctx))
        k = self._split(self.wk.forward(z, ctx))
        v = self._split(self.wv.forward(z, ctx))
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(self.d_head)
        if self.causal:
            p = z.shape[1]
            mask = np.triu(np.ones((p, p), dtype=bool), k=1)
            scores = np.where(mask, -np.inf, scores)
        probs = softmax_last(scores)
        dropped = self.attn_drop.forward(probs, ctx)
        heads = dropped @ v
        out = self.wo.forward(self._merge(heads), ctx)
        if ctx.train:
            self.cache = (q, k, v, probs, dropped)
        return out

    def backward(self, dout):
        q, k, v, probs, dropped = self._trace()
        dmerged = self.wo.backward(dout)
        dheads = self._split(dmerged)
        ddropped = dheads @ v.transpose(0, 1, 3, 2)
        dv = dropped.transpose(0, 1, 3, 2) @ dheads
        dprobs = self.attn_drop.backward(ddropped)
        # softmax backward: ds = p * (dp - sum(dp * p)); masked entries have
        # p = 0 and therefore contribute nothing.
        dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
        dscores /= np.sqrt(self.d_head)
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q
        dz = self.wq.backward(self._merge(dq))
        dz += self.wk.backward(self._merge(dk))
        dz += self.wv.backward(self._merge(dv))
        self.cache = None
        return dz


class FeedForward(Layer):
    """Two linear layers with ReLU in between."""

    def __init__(self, d_emb, hidden, *, rng, std=0.02, dtype=np.float64):
        self.lin1 = Linear(d_emb, hidden, rng=rng, std=std, dtype=dtype)
        self.lin2 = Linear(hidden, d_emb, rng=rng, std=std, dtype=dtype)
        self.cache = None

    def params(self):
        return {
            f"lin1.{k}": v for k, v in self.lin1.params().items()
        } | {f"lin2.{k}": v for k, v in self.lin2.params().items()}

    def grads(self):
        return {
            f"lin1.{k}": v for k, v in self.lin1.grads().items()
        } | {f"lin2.{k}": v for k, v in self.lin2.grads().items()}

    def forward(self, x, ctx: Context):
        h = self.lin1.forward(x, ctx)
        mask = h > 0
        if ctx.train:
            self.cache = mask
        return self.lin2.forward(np.maximum(h, 0.0), ctx)

    def backward(self, dout):
        mask = self._trace()
        dh = self.lin2.backward(dout) * mask
        self.cache = None
        return self.lin1.backward(dh)


class TransformerBlock(Layer):
    """H = Z + Drop(MHA(Norm1(Z))); Z' = H + Drop(FFN(Norm2(H)))."""

    def __init__(self, d_emb, n_heads, hidden, dropout, causal, *, rng, std=0.02, dtype=np.float64):
        self.ln1 = LayerNorm(d_emb, dtype=dtype)
        self.attn = MultiHeadAttention(d_emb, n_heads, dropout, causal, rng=rng, std=std, dtype=dtype)
        self.drop1 = Dropout(dropout)
        self.ln2 = LayerNorm(d_emb, dtype=dtype)
        self.ffn = FeedForward(d_emb, hidden, rng=rng, std=std, dtype=dtype)
        self.drop2 = Dropout(dropout)

    def _sub(self):
        return {"ln1": self.ln1, "attn": self.attn, "ln2": self.ln2, "ffn": self.ffn}

    def params(self):
        return {
            f"{name}.{k}": v for name, lay in self._sub().items() for k, v in lay.params().items()
        }

    def grads(self):
        return {
            f"{name}.{k}": v for name, lay in self._sub().items() for k, v in lay.grads().items()
        }

    def forward(self, z, ctx: Context):
        h = z + self.drop1.forward(self.attn.forward(self.ln1.forward(z, ctx), ctx), ctx)
        return h + self.drop2.forward(self.ffn.forward(self.ln2.forward(h, ctx), ctx), ctx)

    def backward(self, dout):
        dh = dout + self.ln2.backward(self.ffn.backward(self.drop2.backward(dout)))
        return dh + self.ln1.backward(self.attn.backward(self.drop1.backward(dh)))
