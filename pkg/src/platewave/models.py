"""The ordinary, exactly equivariant and approximately equivariant 6-block networks.

All three share one macro-structure on a halving time schedule (158 -> 79 -> 40
-> 20 -> 10 -> 5 for the full record):

1. convolution with kernel length equal to the sequence length, stride 2, no nonlinearity
2-5. convolution + fixed averaging skip path, LayerNorm, swish, channel dropout
6. dense over (channel, time), tanh, dense to the output

The equivariant variants swap block 1 for a lifting convolution, blocks 2-5 for
group convolutions, and read out with the vector (locate) or scalar (detect)
head.  Block 6's dense layers act per group element with shared weights.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import container
from . import layers
from .autodiff import Tensor

VARIANTS = ("ordinary", "exact", "approximate")
TASKS = ("locate", "detect")

# defaults sized to land near the reported parameter budgets
DEFAULT_WIDTHS = {
    "ordinary": (40, 40, 40, 40, 40, 128),
    "exact": (16, 16, 16, 16, 16, 216),
    "approximate": (16, 16, 16, 16, 16, 216),
}


def _normalise_variant(name: str) -> str:
    name = name.lower()
    if name == "approx":
        return "approximate"
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {VARIANTS}")
    return name


@dataclass
class ModelSpec:
    variant: str = "exact"
    task: str = "locate"
    channel_widths: tuple[int, ...] | None = None
    input_length: int = 158
    dropout: float = 0.05
    seed: int = 0
    include_diagonal: bool = False
    # fixed, non-trainable factor on the located position (mm per unit of network output)
    output_scale: float | None = None

    def __post_init__(self):
        self.variant = _normalise_variant(self.variant)
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.channel_widths is None:
            self.channel_widths = DEFAULT_WIDTHS[self.variant]
        self.channel_widths = tuple(int(c) for c in self.channel_widths)
        if len(self.channel_widths) != 6 or min(self.channel_widths) < 1:
            raise ValueError("channel_widths must be six positive integers")
        if self.input_length < 1:
            raise ValueError("input_length must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.output_scale is None:
            self.output_scale = 100.0 if self.task == "locate" else 1.0

    @property
    def equivariant(self) -> bool:
        return self.variant != "ordinary"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_widths"] = list(self.channel_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def halving_schedule(length: int, blocks: int = 5) -> list[int]:
    """Sequence lengths entering each block and leaving the last: ceil-halving."""
    out = [length]
    for _ in range(blocks):
        out.append(-(-out[-1] // 2))
    return out


def halving_padding(length: int, kernel: int) -> int:
    """Symmetric padding that makes a stride-2 convolution output ceil(length / 2) samples."""
    return max(0, math.ceil((kernel - 2 + length % 2) / 2))


class Model:
    """Parameters plus a forward pass; parameters are kept in declaration order."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.lengths = halving_schedule(spec.input_length)
        assert all(n >= 1 for n in self.lengths)
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(spec.seed)
        if spec.equivariant:
            self._init_equivariant(rng)
        else:
            self._init_ordinary(rng)

    # construction

    def _add(self, name: str, value: np.ndarray):
        self.params[name] = ad.parameter(value)

    @staticmethod
    def _uniform(rng, shape, fan_in, gain=6.0):
        bound = math.sqrt(gain / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    def _init_ordinary(self, rng):
        s = self.spec
        w = s.channel_widths
        c_in = 16
        for i in range(5):
            L = self.lengths[i]
            self._add(f"block{i + 1}.kernel", self._uniform(rng, (w[i], c_in, L), c_in * L))
            self._add(f"block{i + 1}.bias", np.zeros((w[i], 1)))
            if i > 0:
                L_out = self.lengths[i + 1]
                self._add(f"block{i + 1}.norm_scale", np.ones((w[i], L_out)))
                self._add(f"block{i + 1}.norm_shift", np.zeros((w[i], L_out)))
            c_in = w[i]
        flat = w[4] * self.lengths[5]
        self._add("block6.dense.weight", self._uniform(rng, (w[5], flat), flat, 3.0))
        self._add("block6.dense.bias", np.zeros(w[5]))
        n_out = 2 if s.task == "locate" else 1
        self._add("head.weight", self._uniform(rng, (n_out, w[5]), w[5], 3.0))
        self._add("head.bias", np.zeros(n_out))

    def _init_equivariant(self, rng):
        s = self.spec
        w = s.channel_widths
        L = self.lengths[0]
        self._add("block1.kernel", self._uniform(rng, (w[0], 1, 4, 4, L), 16 * L))
        self._add("block1.bias", np.zeros((w[0], 1, 1)))
        for i in range(1, 5):
            L = self.lengths[i]
            self._add(f"block{i + 1}.kernel", self._uniform(rng, (w[i], w[i - 1], 8, L), w[i - 1] * 8 * L))
            self._add(f"block{i + 1}.bias", np.zeros((w[i], 1, 1)))
            L_out = self.lengths[i + 1]
            self._add(f"block{i + 1}.norm_scale", np.ones((w[i], 1, L_out)))
            self._add(f"block{i + 1}.norm_shift", np.zeros((w[i], 1, L_out)))
        flat = w[4] * self.lengths[5]
        self._add("block6.dense.weight", self._uniform(rng, (w[5], flat), flat, 3.0))
        self._add("block6.dense.bias", np.zeros(w[5]))
        if s.task == "locate":
            self._add("head.weight", self._uniform(rng, (2, w[5]), w[5], 3.0))
            self._add("head.bias", np.zeros(2))
        else:
            self._add("head.weight", self._uniform(rng, (1, w[5]), w[5], 3.0))
            self._add("head.bias", np.zeros(1))
        if s.variant == "approximate":
            for name in self.symmetry_layers:
                self._add(f"{name}.symmetry", np.zeros(8))

    # introspection

    @property
    def symmetry_layers(self) -> list[str]:
        """Layers carrying symmetry-breaking weights, shallow to deep."""
        if self.spec.variant != "approximate":
            return []
        return ["block1", "block2", "block3", "block4", "block5", "head"]

    def omega(self, layer: str) -> Tensor | None:
        p = self.params.get(f"{layer}.symmetry")
        return None if p is None else layers.symmetry_weights(p)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"parameter {k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    # forward pass

    def prepare_input(self, V) -> np.ndarray:
        """Batch the adjacency signal and zero the self-interaction diagonal unless included."""
        V = np.asarray(V, dtype=np.float64)
        if V.ndim == 3:
            V = V[None]
        if V.ndim != 4 or V.shape[1:3] != (4, 4):
            raise ValueError(f"expected adjacency signals shaped (B, 4, 4, T), got {V.shape}")
        if V.shape[-1] != self.spec.input_length:
            raise ValueError(f"input length {V.shape[-1]} != model input length {self.spec.input_length}")
        if not self.spec.include_diagonal:
            V = V.copy()
            idx = np.arange(4)
            V[:, idx, idx, :] = 0.0
        return V

    def forward(self, V, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Return (B, 2) positions in mm for locate, (B,) logits for detect."""
        x = self.prepare_input(V)
        if self.spec.equivariant:
            out = self._forward_equivariant(x, training, rng)
        else:
            out = self._forward_ordinary(x, training, rng)
        if self.spec.task == "locate" and self.spec.output_scale != 1.0:
            out = out * self.spec.output_scale
        return out

    __call__ = forward

    def _forward_ordinary(self, V, training, rng):
        p = self.params
        s = self.spec
        B, T = V.shape[0], V.shape[-1]
        h = Tensor(V.reshape(B, 16, T))
        for i in range(5):
            L = self.lengths[i]
            pad = halving_padding(L, L)
            y = ad.conv1d(h, p[f"block{i + 1}.kernel"], 2, pad) + p[f"block{i + 1}.bias"]
            if i > 0:
                y = y + layers.average_downsample(h, s.channel_widths[i], L, 2, pad)
                y = ad.layernorm(y, (1, 2), p[f"block{i + 1}.norm_scale"], p[f"block{i + 1}.norm_shift"])
                y = ad.swish(y)
                y = ad.dropout(y, s.dropout, rng, training, channel_axis=1)
            h = y
        flat = h.reshape(B, -1)
        z = ad.tanh(ad.dense(flat, p["block6.dense.weight"], p["block6.dense.bias"]))
        out = ad.dense(z, p["head.weight"], p["head.bias"])
        return out if s.task == "locate" else out.reshape(B)

    def _forward_equivariant(self, V, training, rng):
        p = self.params
        s = self.spec
        B, T = V.shape[0], V.shape[-1]
        x = Tensor(V.reshape(B, 1, 4, 4, T))
        L = self.lengths[0]
        h = layers.lift(x, p["block1.kernel"], 2, halving_padding(L, L), self.omega("block1"))
        h = h + p["block1.bias"]
        for i in range(1, 5):
            L = self.lengths[i]
            pad = halving_padding(L, L)
            y = layers.group_conv(h, p[f"block{i + 1}.kernel"], 2, pad, self.omega(f"block{i + 1}"))
            y = y + p[f"block{i + 1}.bias"]
            y = y + layers.average_downsample(h, s.channel_widths[i], L, 2, pad)
            y = ad.layernorm(y, (1, 2, 3), p[f"block{i + 1}.norm_scale"], p[f"block{i + 1}.norm_shift"])
            y = ad.swish(y)
            y = ad.dropout(y, s.dropout, rng, training, channel_axis=1)
            h = y
        C, L5 = h.shape[1], h.shape[3]
        per_group = h.transpose(0, 2, 1, 3).reshape(B, 8, C * L5)
        z = ad.tanh(ad.dense(per_group, p["block6.dense.weight"], p["block6.dense.bias"]))  # (B, 8, H)
        if s.task == "locate":
            u = ad.dense(z, p["head.weight"], p["head.bias"])                               # (B, 8, 2)
            return layers.vector_head(u.transpose(0, 2, 1), self.omega("head"))
        feats = z.transpose(0, 2, 1).reshape(B, z.shape[2], 8, 1)
        return layers.scalar_head(feats, p["head.weight"], p["head.bias"], self.omega("head"))

    def predict(self, V, batch_size: int = 64) -> np.ndarray:
        """Eval-mode forward over a stack of inputs, without building gradients."""
        V = np.asarray(V)
        single = V.ndim == 3
        if single:
            V = V[None]
        outs = [self.forward(V[i:i + batch_size]).data for i in range(0, len(V), batch_size)]
        out = np.concatenate(outs, axis=0)
        return out[0] if single else out


def build(spec: ModelSpec) -> Model:
    return Model(spec)


# checkpoints

def save_checkpoint(path, model: Model, rng_state: dict | None = None, extra: dict | None = None):
    meta = {
        "kind": "checkpoint",
        "spec": model.spec.to_dict(),
        "parameters": list(model.params),
        "rng_state": rng_state,
        "extra": extra or {},
    }
    container.write(path, container.CHECKPOINT_MAGIC, meta, model.state())


def load_checkpoint(path) -> tuple[Model, dict]:
    meta, arrays = container.read(path, container.CHECKPOINT_MAGIC)
    model = build(ModelSpec.from_dict(meta["spec"]))
    if list(arrays) != list(model.params):
        raise container.FormatError(f"{path}: parameter list does not match the stored spec")
    model.load_state(arrays)
    return model, meta


def rng_state_to_json(rng: np.random.Generator) -> dict:
    return json.loads(json.dumps(rng.bit_generator.state))


def rng_from_state(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)
