"""3D convolution / transposed-convolution autoencoder and its reconstruction losses."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .tensorcore import (
    ShapeError,
    Tensor,
    conv3d,
    conv_output_extent,
    conv_transpose3d,
    default_dtype,
    leaky_relu,
    mse_loss,
    parameter,
    relu,
    sigmoid,
)


@dataclass
class AutoencoderConfig:
    frames: int = 8
    channels_in: int = 1
    height: int = 64
    width: int = 64
    channels: tuple[int, ...] = (16, 32, 64)
    strides: tuple[tuple[int, int, int], ...] = ((1, 2, 2), (2, 2, 2), (2, 2, 2))
    kernel: int = 3
    activation: str = "leaky_relu"
    slope: float = 0.2
    final_activation: str = "sigmoid"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.strides = tuple(tuple(int(v) for v in s) for s in self.strides)

    @property
    def input_shape(self) -> tuple[int, int, int, int]:
        return self.frames, self.channels_in, self.height, self.width

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["strides"] = [list(s) for s in self.strides]
        return d

    def layer_extents(self) -> list[tuple[int, int, int]]:
        """(T, H, W) at the input of every encoder layer plus the bottleneck."""
        if len(self.strides) != len(self.channels):
            raise ShapeError(f"{len(self.channels)} encoder channels but {len(self.strides)} strides")
        if self.activation not in ("leaky_relu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.final_activation not in ("sigmoid", "none"):
            raise ValueError(f"unknown final activation {self.final_activation!r}")
        pad = self.kernel // 2
        ext = [(self.frames, self.height, self.width)]
        for s in self.strides:
            nxt = tuple(conv_output_extent(n, self.kernel, si, pad) for n, si in zip(ext[-1], s))
            if min(nxt) < 1:
                raise ShapeError(f"encoder collapses input {self.input_shape} to {nxt}")
            ext.append(nxt)
        return ext

    def output_padding(self) -> list[tuple[int, int, int]]:
        """Per decoder layer (in decoder order), the output padding that restores the encoder extent."""
        ext = self.layer_extents()
        pad = self.kernel // 2
        out = []
        for i in reversed(range(len(self.strides))):
            op = []
            for n_out, n_in, s in zip(ext[i], ext[i + 1], self.strides[i]):
                o = n_out - ((n_in - 1) * s - 2 * pad + self.kernel)
                if not 0 <= o < s:
                    raise ShapeError(f"decoder cannot restore extent {n_out} from {n_in} at stride {s}")
                op.append(o)
            out.append(tuple(op))
        return out


class Autoencoder:
    """Encoder of strided conv3d layers, mirrored decoder of transposed convs.

    Parameters live in ``self.params`` in a fixed order; names and shapes form the
    checkpoint signature.
    """

    def __init__(self, config: AutoencoderConfig | None = None, seed: int = 0):
        self.config = config or AutoencoderConfig()
        cfg = self.config
        self._out_pad = cfg.output_padding()
        rng = np.random.default_rng(seed)
        k = cfg.kernel
        gain = np.sqrt(2.0 / (1.0 + cfg.slope ** 2)) if cfg.activation == "leaky_relu" else np.sqrt(2.0)
        self.params: dict[str, Tensor] = {}

        def init(name, shape, fan_in):
            bound = gain * np.sqrt(3.0 / fan_in)
            self.params[name + ".weight"] = parameter(rng.uniform(-bound, bound, shape), name + ".weight")
            self.params[name + ".bias"] = parameter(np.zeros(shape[1] if "dec" in name else shape[0]),
                                                    name + ".bias")

        ladder = (cfg.channels_in,) + cfg.channels
        for i in range(len(cfg.channels)):
            init(f"enc{i}", (ladder[i + 1], ladder[i], k, k, k), ladder[i] * k ** 3)
        for j, i in enumerate(reversed(range(len(cfg.channels)))):
            init(f"dec{j}", (ladder[i + 1], ladder[i], k, k, k), ladder[i + 1] * k ** 3)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def signature(self) -> list[tuple[str, str, tuple[int, ...]]]:
        return [(n, p.dtype.str, p.shape) for n, p in self.params.items()]

    def astype(self, dtype) -> "Autoencoder":
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    def _act(self, h: Tensor) -> Tensor:
        if self.config.activation == "relu":
            return relu(h)
        return leaky_relu(h, self.config.slope)

    def forward(self, x) -> Tensor:
        """Reconstruct a batch ``x[N, T, C, H, W]``; output has the same shape."""
        cfg = self.config
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=default_dtype()))
        if x.data.ndim != 5 or x.shape[1:] != cfg.input_shape:
            raise ShapeError(f"model expects [N, {', '.join(map(str, cfg.input_shape))}], got {x.shape}")
        pad = cfg.kernel // 2
        n = len(cfg.channels)
        h = x
        for i in range(n):
            h = self._act(conv3d(h, self.params[f"enc{i}.weight"], self.params[f"enc{i}.bias"],
                                 cfg.strides[i], pad))
        for j in range(n):
            i = n - 1 - j
            h = conv_transpose3d(h, self.params[f"dec{j}.weight"], self.params[f"dec{j}.bias"],
                                 cfg.strides[i], pad, self._out_pad[j])
            if j < n - 1:
                h = self._act(h)
        if cfg.final_activation == "sigmoid":
            h = sigmoid(h)
        return h

    __call__ = forward

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without recording parameter gradients."""
        saved = self.params
        self.params = {k: Tensor(v.data) for k, v in saved.items()}
        try:
            return self.forward(x).data
        finally:
            self.params = saved


def loss_normal(xhat: Tensor, xn) -> Tensor:
    """Mean squared reconstruction error of a normal input against itself."""
    return mse_loss(xhat, xn if isinstance(xn, Tensor) else Tensor(xn))


def loss_pseudo(xhat_of_xp: Tensor, xn) -> Tensor:
    """Mean squared error of the reconstruction of a pseudo anomaly against the normal
    window it was generated from (not against the perturbed input)."""
    return mse_loss(xhat_of_xp, xn if isinstance(xn, Tensor) else Tensor(xn))
