"""Compact dual-path convolutional 6D pose regressor.

Topology: a patchify stem (strided conv) downsamples the 2-channel binary
frame, four shared blocks extract features, then two independent paths of
three blocks regress translation and rotation through convolutional output
blocks (no activation neuron) and global average pooling.

Variants: formal blocks are conv -> BN -> ReLU; spiking blocks are
BN -> conv -> PLIF so that inter-block traffic stays binary once BN is
folded into the conv for inference. Output blocks never carry a neuron so
the heads can emit floating-point pose components.

Default channel plan lands the trainable parameter count inside the
625k +/- 2% budget for all activation/BN variants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .nn import functional as F
from .nn.checkpoint import read_checkpoint, write_checkpoint
from .nn.tensor import Tensor, no_grad

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass(frozen=True)
class BlockSpec:
    in_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 2
    padding: int = 1


DEFAULT_STEM = BlockSpec(2, 32, kernel=4, stride=4, padding=0)
DEFAULT_SHARED = (
    BlockSpec(32, 64),
    BlockSpec(64, 64),
    BlockSpec(64, 128),
    BlockSpec(128, 128),
)
DEFAULT_PATH = (
    BlockSpec(128, 64),
    BlockSpec(64, 64),
    BlockSpec(64, 96),
)
DEFAULT_HEAD = BlockSpec(96, 3, kernel=3, stride=1, padding=1)


@dataclass(frozen=True)
class PoseNetConfig:
    activation: str = "plif"  # "relu" | "plif"
    use_bn: bool = True
    scheduler: str = "cos"  # "step" | "cos"
    stem: BlockSpec = DEFAULT_STEM
    shared: tuple[BlockSpec, ...] = DEFAULT_SHARED
    path: tuple[BlockSpec, ...] = DEFAULT_PATH
    head: BlockSpec = DEFAULT_HEAD
    param_budget: int | None = 625_000
    budget_tol: float = 0.02

    def __post_init__(self):
        if self.activation not in ("relu", "plif"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.scheduler not in ("step", "cos"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")

    @property
    def spiking(self) -> bool:
        return self.activation == "plif"

    def variant_name(self) -> str:
        return f"{self.activation}-{'bn' if self.use_bn else 'nobn'}-{self.scheduler}"


# the six benchmark variants; formal rows train with the step schedule
PRESETS = (
    "relu-nobn-step",
    "relu-bn-step",
    "plif-nobn-step",
    "plif-nobn-cos",
    "plif-bn-step",
    "plif-bn-cos",
)


def config_from_variant(name: str, **overrides) -> PoseNetConfig:
    parts = name.split("-")
    if len(parts) != 3 or parts[0] not in ("relu", "plif") \
            or parts[1] not in ("bn", "nobn") or parts[2] not in ("step", "cos"):
        raise ValueError(f"variant must match {{relu|plif}}-{{bn|nobn}}-{{step|cos}}, "
                         f"got {name!r}")
    return PoseNetConfig(activation=parts[0], use_bn=parts[1] == "bn",
                         scheduler=parts[2], **overrides)


def scaled_plan(width_scale: float, in_ch: int = 2) -> dict:
    """Shrink the channel plan for desk-scale runs (budget check disabled)."""

    def s(ch: int) -> int:
        return max(1, int(round(ch * width_scale)))

    def shrink(spec: BlockSpec, cin: int, cout: int) -> BlockSpec:
        return replace(spec, in_ch=cin, out_ch=cout)

    stem = shrink(DEFAULT_STEM, in_ch, s(DEFAULT_STEM.out_ch))
    shared = []
    prev = stem.out_ch
    for spec in DEFAULT_SHARED:
        shared.append(shrink(spec, prev, s(spec.out_ch)))
        prev = shared[-1].out_ch
    path = []
    for spec in DEFAULT_PATH:
        path.append(shrink(spec, prev, s(spec.out_ch)))
        prev = path[-1].out_ch
    head = shrink(DEFAULT_HEAD, prev, 3)
    return {"stem": stem, "shared": tuple(shared), "path": tuple(path),
            "head": head, "param_budget": None}


class ModelStateError(RuntimeError):
    """Operation called in the wrong model mode (train vs eval, fused)."""


class ConvBlock:
    """conv + optional BN + optional activation neuron.

    `bn_before_conv` selects the spiking placement. After fusion the BN is
    gone; for the spiking placement the folded per-channel input offset is
    kept as a collapsed single-channel kernel so border pixels (which see
    zero padding, not the offset) stay exact.
    """

    def __init__(self, name: str, spec: BlockSpec, activation: str | None,
                 use_bn: bool, bn_before_conv: bool, rng: np.random.Generator):
        self.name = name
        self.spec = spec
        self.activation = activation
        self.bn_before_conv = bn_before_conv
        k, cin, cout = spec.kernel, spec.in_ch, spec.out_ch
        bound = math.sqrt(6.0 / (cin * k * k))
        self.weight = Tensor(rng.uniform(-bound, bound, (cout, cin, k, k)),
                             requires_grad=True, dtype=np.float32)
        self.bias = Tensor(np.zeros(cout), requires_grad=True, dtype=np.float32)
        if use_bn:
            bn_ch = cin if bn_before_conv else cout
            self.gamma = Tensor(np.ones(bn_ch), requires_grad=True, dtype=np.float32)
            self.beta = Tensor(np.zeros(bn_ch), requires_grad=True, dtype=np.float32)
            self.running_mean = np.zeros(bn_ch, np.float32)
            self.running_var = np.ones(bn_ch, np.float32)
        else:
            self.gamma = self.beta = None
            self.running_mean = self.running_var = None
        if activation == "plif":
            self.plif_w = Tensor(np.zeros(()), requires_grad=True, dtype=np.float32)
        else:
            self.plif_w = None
        self.offset_kernel: np.ndarray | None = None  # (out_ch, k, k) after fusion
        self._offset_cache: dict = {}
        self.v: Tensor | None = None  # PLIF membrane state

    @property
    def has_bn(self) -> bool:
        return self.gamma is not None

    def reset_state(self):
        self.v = None

    def named_parameters(self):
        yield f"{self.name}.conv.weight", self.weight
        yield f"{self.name}.conv.bias", self.bias
        if self.has_bn:
            yield f"{self.name}.bn.gamma", self.gamma
            yield f"{self.name}.bn.beta", self.beta
        if self.plif_w is not None:
            yield f"{self.name}.plif.w", self.plif_w

    def named_buffers(self):
        if self.has_bn:
            yield f"{self.name}.bn.running_mean", self.running_mean
            yield f"{self.name}.bn.running_var", self.running_var
        if self.offset_kernel is not None:
            yield f"{self.name}.conv.offset_kernel", self.offset_kernel

    def _offset_map(self, h: int, w: int, dtype) -> np.ndarray:
        key = (h, w)
        cached = self._offset_cache.get(key)
        if cached is None or cached.dtype != dtype:
            from .nn import backend
            ones = np.ones((1, 1, h, w), dtype=dtype)
            q = self.offset_kernel[:, None, :, :].astype(dtype)
            cached = backend.conv2d_forward(ones, q, self.spec.stride, self.spec.padding)
            self._offset_cache[key] = cached
        return cached

    def forward(self, x: Tensor, training: bool, tap=None) -> Tensor:
        s = self.spec
        if self.bn_before_conv and self.has_bn:
            x = F.batch_norm(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, training, BN_MOMENTUM, BN_EPS)
        out = F.conv2d(x, self.weight, self.bias, s.stride, s.padding)
        if self.offset_kernel is not None:
            off = self._offset_map(x.data.shape[2], x.data.shape[3], out.data.dtype)
            out = F.add(out, Tensor(off, dtype=out.data.dtype))
        if not self.bn_before_conv and self.has_bn:
            out = F.batch_norm(out, self.gamma, self.beta, self.running_mean,
                               self.running_var, training, BN_MOMENTUM, BN_EPS)
        if self.activation == "relu":
            out = F.relu(out)
        elif self.activation == "plif":
            conv_out = out
            if self.v is None or self.v.data.shape != conv_out.data.shape:
                self.v = Tensor(np.zeros_like(conv_out.data))
            v_prev = self.v
            spikes, self.v = F.plif_step(conv_out, v_prev, self.plif_w)
            if tap is not None:
                decay = 1.0 / (1.0 + math.exp(-float(self.plif_w.data)))
                tap(f"{self.name}.plif", {
                    "x": conv_out.data, "v_prev": v_prev.data, "decay": decay,
                    "spikes": spikes.data, "v_next": self.v.data,
                    "threshold": F.PLIF_THRESHOLD,
                })
            out = spikes
        if tap is not None:
            tap(f"{self.name}.out", out.data)
        return out


class PoseNet:
    def __init__(self, config: PoseNetConfig, seed: int = 0):
        self.config = config
        self.training = True
        self.fused = False
        rng = np.random.default_rng(seed)
        act = config.activation
        pre = config.spiking  # BN before conv in spiking variants
        bn = config.use_bn
        self.stem = ConvBlock("stem", config.stem, act, bn, pre, rng)
        self.shared = [ConvBlock(f"shared{i}", sp, act, bn, pre, rng)
                       for i, sp in enumerate(config.shared)]
        self.trans_path = [ConvBlock(f"trans{i}", sp, act, bn, pre, rng)
                           for i, sp in enumerate(config.path)]
        self.trans_head = ConvBlock("trans_head", config.head, None, bn, pre, rng)
        self.rot_path = [ConvBlock(f"rot{i}", sp, act, bn, pre, rng)
                         for i, sp in enumerate(config.path)]
        self.rot_head = ConvBlock("rot_head", config.head, None, bn, pre, rng)

    def blocks(self) -> list[ConvBlock]:
        return [self.stem, *self.shared, *self.trans_path, self.trans_head,
                *self.rot_path, self.rot_head]

    def output_blocks(self) -> tuple[ConvBlock, ConvBlock]:
        return self.trans_head, self.rot_head

    def train(self):
        if self.fused:
            raise ModelStateError("fused models are inference-only")
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def reset_state(self):
        for b in self.blocks():
            b.reset_state()

    def named_parameters(self):
        for b in self.blocks():
            yield from b.named_parameters()

    def named_buffers(self):
        for b in self.blocks():
            yield from b.named_buffers()

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None

    def forward_frame(self, x, tap=None) -> Tensor:
        """One frame (N,2,H,W) -> (N,6) pose vectors; PLIF state persists."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, np.float32))
        if x.data.ndim != 4 or x.data.shape[1] != self.config.stem.in_ch:
            raise ValueError(f"expected (N,{self.config.stem.in_ch},H,W), got {x.shape}")
        h = self.stem.forward(x, self.training, tap)
        for b in self.shared:
            h = b.forward(h, self.training, tap)
        t = h
        for b in self.trans_path:
            t = b.forward(t, self.training, tap)
        t = F.global_avg_pool(self.trans_head.forward(t, self.training, tap))
        r = h
        for b in self.rot_path:
            r = b.forward(r, self.training, tap)
        r = F.global_avg_pool(self.rot_head.forward(r, self.training, tap))
        return F.concat([t, r], axis=1)

    def forward_sequence(self, frames: np.ndarray, tap=None) -> np.ndarray:
        """Eval helper: (T,N,2,H,W) or (T,2,H,W) -> (T,N,6), state reset first."""
        frames = np.asarray(frames, np.float32)
        squeeze = frames.ndim == 4
        if squeeze:
            frames = frames[:, None]
        self.reset_state()
        outs = []
        with no_grad():
            for t in range(frames.shape[0]):
                outs.append(self.forward_frame(frames[t], tap).data)
        out = np.stack(outs)
        return out[:, 0] if squeeze else out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own_params = dict(self.named_parameters())
        expected = set(own_params)
        for b in self.blocks():
            if b.has_bn:
                expected.add(f"{b.name}.bn.running_mean")
                expected.add(f"{b.name}.bn.running_var")
        # offset kernels appear only in fused checkpoints
        optional = {f"{b.name}.conv.offset_kernel" for b in self.blocks()}
        got = set(state)
        missing = sorted(expected - got)
        extra = sorted(got - expected - optional)
        if missing or extra:
            raise ModelStateError(f"state dict mismatch: missing {missing}, extra {extra}")
        for name, p in own_params.items():
            p.data = np.array(state[name], np.float32).reshape(p.data.shape)
        for b in self.blocks():
            if b.has_bn:
                b.running_mean = np.array(state[f"{b.name}.bn.running_mean"], np.float32)
                b.running_var = np.array(state[f"{b.name}.bn.running_var"], np.float32)
            off_key = f"{b.name}.conv.offset_kernel"
            if off_key in state:
                b.offset_kernel = np.array(state[off_key], np.float32)
                b._offset_cache = {}
        return self


def build(config: PoseNetConfig, seed: int = 0) -> PoseNet:
    """Deterministically initialize a model; enforces the parameter budget."""
    model = PoseNet(config, seed)
    if config.param_budget is not None:
        n = count_params(model)
        lo = int(config.param_budget * (1.0 - config.budget_tol))
        hi = int(config.param_budget * (1.0 + config.budget_tol))
        if not lo <= n <= hi:
            raise ValueError(f"channel plan yields {n} trainable parameters, "
                             f"outside [{lo}, {hi}]")
    return model


def count_params(model: PoseNet) -> int:
    """All trainable scalars: conv weights/biases, BN gamma/beta, PLIF decay."""
    return sum(p.data.size for _, p in model.named_parameters())


def fuse_bn(model: PoseNet) -> PoseNet:
    """Fold BN into the adjacent convolutions; eval outputs are preserved.

    conv->BN folds into scaled weights and a shifted bias. BN->conv folds
    the per-input-channel affine into the weights plus an offset kernel
    convolved with an all-ones plane at forward time, which reproduces the
    missing offset contribution at zero-padded borders exactly.
    """
    if model.training:
        raise ModelStateError("fuse requires eval mode with populated running stats")
    fused_cfg = replace(model.config, use_bn=False, param_budget=None)
    fused = PoseNet(fused_cfg, seed=0)
    fused.training = False
    fused.fused = True
    for src, dst in zip(model.blocks(), fused.blocks()):
        w = src.weight.data.astype(np.float64)
        b = src.bias.data.astype(np.float64)
        if not src.has_bn:
            dst.weight.data = w.astype(np.float32)
            dst.bias.data = b.astype(np.float32)
        elif not src.bn_before_conv:
            # y = BN(conv(x)): scale output channels
            s = src.gamma.data.astype(np.float64) \
                / np.sqrt(src.running_var.astype(np.float64) + BN_EPS)
            beta = src.beta.data.astype(np.float64)
            mu = src.running_mean.astype(np.float64)
            dst.weight.data = (w * s[:, None, None, None]).astype(np.float32)
            dst.bias.data = ((b - mu) * s + beta).astype(np.float32)
        else:
            # y = conv(BN(x)): scale input channels, collapse the offset
            s = src.gamma.data.astype(np.float64) \
                / np.sqrt(src.running_var.astype(np.float64) + BN_EPS)
            t = src.beta.data.astype(np.float64) - src.running_mean.astype(np.float64) * s
            dst.weight.data = (w * s[None, :, None, None]).astype(np.float32)
            q = np.einsum("ockl,c->okl", w, t)
            if src.spec.padding == 0:
                dst.bias.data = (b + q.sum(axis=(1, 2))).astype(np.float32)
            else:
                dst.bias.data = b.astype(np.float32)
                dst.offset_kernel = q.astype(np.float32)
        if src.plif_w is not None:
            dst.plif_w.data = src.plif_w.data.copy()
    return fused


# ------------------------------------------------------- config persistence

def config_to_kv(config: PoseNetConfig, extra: dict | None = None) -> str:
    """Flat key=value serialization stored beside checkpoints."""

    def plan(spec: BlockSpec) -> str:
        return f"{spec.in_ch},{spec.out_ch},{spec.kernel},{spec.stride},{spec.padding}"

    lines = [
        f"activation={config.activation}",
        f"use_bn={int(config.use_bn)}",
        f"scheduler={config.scheduler}",
        f"stem={plan(config.stem)}",
        f"shared={';'.join(plan(s) for s in config.shared)}",
        f"path={';'.join(plan(s) for s in config.path)}",
        f"head={plan(config.head)}",
        f"param_budget={config.param_budget if config.param_budget is not None else ''}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def config_from_kv(text: str) -> tuple[PoseNetConfig, dict]:
    kv: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()

    def spec(s: str) -> BlockSpec:
        vals = [int(v) for v in s.split(",")]
        return BlockSpec(*vals)

    def specs(s: str) -> tuple[BlockSpec, ...]:
        return tuple(spec(part) for part in s.split(";") if part)

    budget = kv.get("param_budget", "")
    config = PoseNetConfig(
        activation=kv["activation"],
        use_bn=bool(int(kv["use_bn"])),
        scheduler=kv["scheduler"],
        stem=spec(kv["stem"]),
        shared=specs(kv["shared"]),
        path=specs(kv["path"]),
        head=spec(kv["head"]),
        param_budget=int(budget) if budget else None,
    )
    known = {"activation", "use_bn", "scheduler", "stem", "shared", "path", "head",
             "param_budget"}
    extra = {k: v for k, v in kv.items() if k not in known}
    return config, extra


def save_model(model: PoseNet, path: str):
    with open(path, "wb") as fh:
        fh.write(write_checkpoint(model.state_dict()))
    extra = {"fused": int(model.fused)}
    with open(path + ".cfg", "w", encoding="utf-8") as fh:
        fh.write(config_to_kv(model.config, extra))


def load_model(path: str) -> PoseNet:
    with open(path + ".cfg", encoding="utf-8") as fh:
        config, extra = config_from_kv(fh.read())
    with open(path, "rb") as fh:
        state = read_checkpoint(fh.read())
    model = PoseNet(config, seed=0)
    if int(extra.get("fused", "0")):
        model.fused = True
        model.training = False
        for b in model.blocks():
            b.gamma = b.beta = None
            b.running_mean = b.running_var = None
    model.load_state_dict(state)
    if model.fused:
        model.eval()
    return model
