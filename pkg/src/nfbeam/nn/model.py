"""The CNN feature extractor + GPT-2-style predictor, assembled.

The CNN runs on each frame independently (frames are folded into the batch
axis), a learnable positional embedding is added per frame slot, and L
pre-norm transformer blocks followed by a final layer norm and linear head
produce per-position logits over the near-field codebook.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct

import numpy as np

from ..config import ModelConfig, SystemConfig
from ..errors import DataFormatError, DimensionError, TrainingError
from .layers import (
    AdaptiveAvgPool2d,
    BatchNorm2d,
    Context,
    Conv2d,
    Dropout,
    Layer,
    LayerNorm,
    Linear,
    ReLU,
)
from .transformer import TransformerBlock

_CKPT_MAGIC = b"NFCK"
_CKPT_VERSION = 1


def _namespaced(sub: dict[str, Layer], getter) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name, layer in sub.items():
        for key, value in getter(layer).items():
            out[f"{name}.{key}"] = value
    return out


class ResBlock(Layer):
    """conv-BN-ReLU-dropout-conv-BN plus a skip path, ReLU on the sum.

    The skip is the identity when shapes match, otherwise a strided 1x1
    convolution with its own batch norm.
    """

    def __init__(self, c_in, c_out, stride, dropout, *, rng, std, momentum, dtype):
        self.conv1 = Conv2d(c_in, c_out, 3, stride, 1, rng=rng, std=std, dtype=dtype)
        self.bn1 = BatchNorm2d(c_out, momentum, dtype=dtype)
        self.relu1 = ReLU()
        self.drop = Dropout(dropout)
        self.conv2 = Conv2d(c_out, c_out, 3, 1, 1, rng=rng, std=std, dtype=dtype)
        self.bn2 = BatchNorm2d(c_out, momentum, dtype=dtype)
        self.downsample = stride != 1 or c_in != c_out
        if self.downsample:
            self.conv_skip = Conv2d(c_in, c_out, 1, stride, 0, rng=rng, std=std, dtype=dtype)
            self.bn_skip = BatchNorm2d(c_out, momentum, dtype=dtype)
        self.cache = None

    def _sub(self):
        sub = {"conv1": self.conv1, "bn1": self.bn1, "conv2": self.conv2, "bn2": self.bn2}
        if self.downsample:
            sub.update({"conv_skip": self.conv_skip, "bn_skip": self.bn_skip})
        return sub

    def params(self):
        return _namespaced(self._sub(), lambda l: l.params())

    def grads(self):
        return _namespaced(self._sub(), lambda l: l.grads())

    def bn_layers(self):
        out = {"bn1": self.bn1, "bn2": self.bn2}
        if self.downsample:
            out["bn_skip"] = self.bn_skip
        return out

    def forward(self, x, ctx: Context):
        main = self.conv1.forward(x, ctx)
        main = self.bn1.forward(main, ctx)
        main = self.relu1.forward(main, ctx)
        main = self.drop.forward(main, ctx)
        main = self.conv2.forward(main, ctx)
        main = self.bn2.forward(main, ctx)
        if self.downsample:
            skip = self.bn_skip.forward(self.conv_skip.forward(x, ctx), ctx)
        else:
            skip = x
        summed = main + skip
        if ctx.train:
            self.cache = summed > 0
        return np.maximum(summed, 0.0)

    def backward(self, dout):
        dsum = dout * self._trace()
        self.cache = None
        dmain = self.bn2.backward(dsum)
        dmain = self.conv2.backward(dmain)
        dmain = self.drop.backward(dmain)
        dmain = self.relu1.backward(dmain)
        dmain = self.bn1.backward(dmain)
        dx = self.conv1.backward(dmain)
        if self.downsample:
            dx = dx + self.conv_skip.backward(self.bn_skip.backward(dsum))
        else:
            dx = dx + dsum
        return dx


class CNNExtractor(Layer):
    """Initial conv, three residual blocks, adaptive pooling, projection."""

    def __init__(self, mcfg: ModelConfig, *, rng, dtype):
        std, mom = mcfg.init_std, mcfg.bn_momentum
        self.init_conv = Conv2d(2, mcfg.init_channels, 3, 1, 1, rng=rng, std=std, dtype=dtype)
        self.init_bn = BatchNorm2d(mcfg.init_channels, mom, dtype=dtype)
        self.init_relu = ReLU()
        self.rb1 = ResBlock(mcfg.init_channels, mcfg.block_channels, 2, mcfg.dropout,
                            rng=rng, std=std, momentum=mom, dtype=dtype)
        self.rb2 = ResBlock(mcfg.block_channels, mcfg.block_channels, 1, mcfg.dropout,
                            rng=rng, std=std, momentum=mom, dtype=dtype)
        self.rb3 = ResBlock(mcfg.block_channels, mcfg.block_channels, 1, mcfg.dropout,
                            rng=rng, std=std, momentum=mom, dtype=dtype)
        self.pool = AdaptiveAvgPool2d(mcfg.pool_hw, mcfg.pool_hw)
        flat = mcfg.block_channels * mcfg.pool_hw * mcfg.pool_hw
        self.proj = Linear(flat, mcfg.d_emb, rng=rng, std=std, dtype=dtype)
        self.proj_relu = ReLU()
        self.proj_drop = Dropout(mcfg.dropout)
        self._flat = flat

    def _sub(self):
        return {
            "init_conv": self.init_conv,
            "init_bn": self.init_bn,
            "rb1": self.rb1,
            "rb2": self.rb2,
            "rb3": self.rb3,
            "proj": self.proj,
        }

    def params(self):
        return _namespaced(self._sub(), lambda l: l.params())

    def grads(self):
        return _namespaced(self._sub(), lambda l: l.grads())

    def bn_layers(self):
        out = {"init_bn": self.init_bn}
        for name, rb in (("rb1", self.rb1), ("rb2", self.rb2), ("rb3", self.rb3)):
            for key, bn in rb.bn_layers().items():
                out[f"{name}.{key}"] = bn
        return out

    def forward(self, x, ctx: Context):
        h = self.init_relu.forward(self.init_bn.forward(self.init_conv.forward(x, ctx), ctx), ctx)
        h = self.rb3.forward(self.rb2.forward(self.rb1.forward(h, ctx), ctx), ctx)
        pooled = self.pool.forward(h, ctx)
        flat = pooled.reshape(pooled.shape[0], -1)
        return self.proj_drop.forward(
            self.proj_relu.forward(self.proj.forward(flat, ctx), ctx), ctx
        )

    def backward(self, dout):
        dflat = self.proj.backward(self.proj_relu.backward(self.proj_drop.backward(dout)))
        g = self.pool.out_h
        dpooled = dflat.reshape(dflat.shape[0], -1, g, g)
        dh = self.rb1.backward(self.rb2.backward(self.rb3.backward(self.pool.backward(dpooled))))
        return self.init_conv.backward(
            self.init_bn.backward(self.init_relu.backward(dh))
        )


class BeamPredictionModel:
    """End-to-end model: pilot tensors (B, P, 2, K, G) -> logits (B, P, |N|)."""

    def __init__(
        self,
        mcfg: ModelConfig,
        scfg: SystemConfig,
        *,
        init_seed: int = 0,
        dtype=np.float32,
    ):
        self.mcfg = mcfg
        self.scfg = scfg
        self.init_seed = init_seed
        self.dtype = dtype
        self.num_classes = scfg.codebook_size
        self.context_frames = scfg.context_frames
        rng = np.random.default_rng(init_seed)
        self.cnn = CNNExtractor(mcfg, rng=rng, dtype=dtype)
        self.pos = (rng.standard_normal((scfg.context_frames, mcfg.d_emb)) * mcfg.init_std).astype(dtype)
        self.dpos = np.zeros_like(self.pos)
        self.emb_drop = Dropout(mcfg.dropout)
        self.blocks = [
            TransformerBlock(
                mcfg.d_emb, mcfg.n_heads, mcfg.ffn_hidden, mcfg.dropout, mcfg.causal,
                rng=rng, std=mcfg.init_std, dtype=dtype,
            )
            for _ in range(mcfg.n_layers)
        ]
        self.final_ln = LayerNorm(mcfg.d_emb, dtype=dtype)
        self.head = Linear(mcfg.d_emb, self.num_classes, rng=rng, std=mcfg.init_std, dtype=dtype)
        self._batch_shape = None

    def params(self) -> dict[str, np.ndarray]:
        out = {f"cnn.{k}": v for k, v in self.cnn.params().items()}
        out["pos.e"] = self.pos
        for i, blk in enumerate(self.blocks):
            out.update({f"blocks.{i}.{k}": v for k, v in blk.params().items()})
        out.update({f"final_ln.{k}": v for k, v in self.final_ln.params().items()})
        out.update({f"head.{k}": v for k, v in self.head.params().items()})
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {f"cnn.{k}": v for k, v in self.cnn.grads().items()}
        out["pos.e"] = self.dpos
        for i, blk in enumerate(self.blocks):
            out.update({f"blocks.{i}.{k}": v for k, v in blk.grads().items()})
        out.update({f"final_ln.{k}": v for k, v in self.final_ln.grads().items()})
        out.update({f"head.{k}": v for k, v in self.head.grads().items()})
        return out

    def bn_state(self) -> dict[str, np.ndarray]:
        out = {}
        for name, bn in self.cnn.bn_layers().items():
            for key, value in bn.state().items():
                out[f"cnn.{name}.{key}"] = value
        return out

    def forward(self, x: np.ndarray, ctx: Context) -> np.ndarray:
        if x.ndim != 5 or x.shape[2] != 2:
            raise DimensionError(f"expected (B, P, 2, K, G) input, got {x.shape}")
        b, p = x.shape[:2]
        if p > self.pos.shape[0]:
            raise DimensionError(
                f"sequence length {p} exceeds positional table {self.pos.shape[0]}"
            )
        self._batch_shape = (b, p)
        feats = self.cnn.forward(x.reshape(b * p, *x.shape[2:]).astype(self.dtype), ctx)
        z = feats.reshape(b, p, -1) + self.pos[None, :p, :]
        z = self.emb_drop.forward(z, ctx)
        for blk in self.blocks:
            z = blk.forward(z, ctx)
        z = self.final_ln.forward(z, ctx)
        return self.head.forward(z, ctx)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        if self._batch_shape is None:
            raise TrainingError("backward called before a forward pass")
        b, p = self._batch_shape
        dz = self.final_ln.backward(self.head.backward(dlogits.astype(self.dtype)))
        for blk in reversed(self.blocks):
            dz = blk.backward(dz)
        dz = self.emb_drop.backward(dz)
        self.dpos[...] = 0.0
        self.dpos[:p] = dz.sum(axis=0)
        dfeats = dz.reshape(b * p, -1)
        dx = self.cnn.backward(dfeats)
        return dx.reshape(b, p, *dx.shape[1:])

    def eval_logits(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Deterministic eval-mode forward over arbitrarily many samples."""
        ctx = Context(train=False)
        chunks = [
            self.forward(x[i : i + batch_size], ctx)
            for i in range(0, x.shape[0], batch_size)
        ]
        return np.concatenate(chunks, axis=0)


def param_count(model: BeamPredictionModel) -> dict[str, int]:
    """Exact learnable-parameter counts per architecture group."""
    groups = {
        "init_conv": ("cnn.init_conv.", "cnn.init_bn."),
        "resblock1": ("cnn.rb1.",),
        "resblock2": ("cnn.rb2.",),
        "resblock3": ("cnn.rb3.",),
        "projection": ("cnn.proj.",),
        "positional": ("pos.",),
        "transformer_blocks": ("blocks.",),
        "output_head": ("final_ln.", "head."),
    }
    params = model.params()
    table = {name: 0 for name in groups}
    for key, value in params.items():
        for name, prefixes in groups.items():
            if key.startswith(prefixes):
                table[name] += value.size
                break
    table["total"] = sum(v.size for v in params.values())
    return table


def flops_breakdown(scfg: SystemConfig, mcfg: ModelConfig) -> dict[str, int]:
    """Complexity terms: sum C_in C_out Kc^2 H W over convs, plus the
    transformer's L * P^2 * D attention and L * P * D^2 feed-through terms,
    all with explicit constant 1."""
    k, g = scfg.num_subcarriers, scfg.widebeam_count
    h2, w2 = (k + 1) // 2, (g + 1) // 2  # after the stride-2 block
    convs = [
        (2, mcfg.init_channels, 3, k, g),
        (mcfg.init_channels, mcfg.block_channels, 3, h2, w2),
        (mcfg.block_channels, mcfg.block_channels, 3, h2, w2),
        (mcfg.init_channels, mcfg.block_channels, 1, h2, w2),  # rb1 skip
        (mcfg.block_channels, mcfg.block_channels, 3, h2, w2),
        (mcfg.block_channels, mcfg.block_channels, 3, h2, w2),
        (mcfg.block_channels, mcfg.block_channels, 3, h2, w2),
        (mcfg.block_channels, mcfg.block_channels, 3, h2, w2),
    ]
    cnn = sum(ci * co * kc * kc * hh * ww for ci, co, kc, hh, ww in convs)
    p, d = scfg.context_frames, mcfg.d_emb
    return {
        "cnn": int(cnn),
        "attention": int(mcfg.n_layers * p * p * d),
        "ffn": int(mcfg.n_layers * p * d * d),
    }


def flops_estimate(scfg: SystemConfig, mcfg: ModelConfig) -> int:
    return sum(flops_breakdown(scfg, mcfg).values())


def conv_layer_flops(c_in: int, c_out: int, kernel: int, h: int, w: int) -> int:
    """Single-layer term of the complexity formula."""
    return c_in * c_out * kernel * kernel * h * w


def save_checkpoint(path: str, model: BeamPredictionModel, step_count: int = 0,
                    extra: dict | None = None) -> None:
    """Deterministic binary checkpoint: JSON header + flat parameter payload."""
    params = model.params()
    state = model.bn_state()
    header = {
        "format": "nfbeam-checkpoint",
        "version": _CKPT_VERSION,
        "dtype": np.dtype(model.dtype).str,
        "init_seed": model.init_seed,
        "step_count": step_count,
        "model": dataclasses.asdict(model.mcfg),
        "system": dataclasses.asdict(model.scfg),
        "params": [[k, list(v.shape)] for k, v in params.items()],
        "state": [[k, list(v.shape)] for k, v in state.items()],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(blob)))
        fh.write(blob)
        for value in params.values():
            fh.write(np.ascontiguousarray(value).tobytes())
        for value in state.values():
            fh.write(np.ascontiguousarray(value).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[BeamPredictionModel, dict]:
    """Rebuild the model from a checkpoint; lossless round trip."""
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise DataFormatError("bad magic; not an nfbeam checkpoint")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _CKPT_VERSION:
            raise DataFormatError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len))
        sys_raw = dict(header["system"])
        for key in ("distance_range_m", "angle_range_deg", "speed_range_kmh"):
            sys_raw[key] = tuple(sys_raw[key])
        model = BeamPredictionModel(
            ModelConfig(**header["model"]),
            SystemConfig(**sys_raw),
            init_seed=header["init_seed"],
            dtype=np.dtype(header["dtype"]).type,
        )
        dtype = np.dtype(header["dtype"])
        params = model.params()
        state = model.bn_state()
        for name, shape in header["params"]:
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(n * dtype.itemsize)
            if len(raw) != n * dtype.itemsize:
                raise DataFormatError("truncated checkpoint payload")
            if name not in params or list(params[name].shape) != shape:
                raise DataFormatError(f"checkpoint parameter {name!r} does not match model")
            params[name][...] = np.frombuffer(raw, dtype=dtype).reshape(shape)
        for name, shape in header["state"]:
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(n * dtype.itemsize)
            if len(raw) != n * dtype.itemsize:
                raise DataFormatError("truncated checkpoint payload")
            state[name][...] = np.frombuffer(raw, dtype=dtype).reshape(shape)
    return model, header
