"""Dense feed-forward networks over a flat parameter slice."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dilar.errors import InvalidArgument
from dilar.netcore import autodiff as ad

ACTIVATIONS = ("identity", "softplus")


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes and activations.

    Hidden layers use tanh. Parameters are laid out layer by layer as the
    row-major weight matrix ``(fan_out, fan_in)`` followed by the bias.
    """

    input_dim: int
    hidden_dims: tuple = field(default=())
    output_dim: int = 1
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        for name, d in [("input_dim", self.input_dim), ("output_dim", self.output_dim)]:
            if int(d) < 1:
                raise InvalidArgument(f"{name} must be >= 1, got {d}")
        if any(d < 1 for d in self.hidden_dims):
            raise InvalidArgument(f"hidden_dims must all be >= 1, got {self.hidden_dims}")
        if self.hidden_activation != "tanh":
            raise InvalidArgument(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in ACTIVATIONS:
            raise InvalidArgument(f"unsupported output activation {self.output_activation!r}")

    @property
    def sizes(self) -> tuple:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def param_count(self) -> int:
        s = self.sizes
        return sum((s[k] + 1) * s[k + 1] for k in range(len(s) - 1))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "output_activation": self.output_activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(
            d["input_dim"], tuple(d.get("hidden_dims", ())), d["output_dim"],
            output_activation=d.get("output_activation", "identity"),
        )


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    s = spec.sizes
    chunks = []
    for k in range(len(s) - 1):
        fan_in, fan_out = s[k], s[k + 1]
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def mlp_forward(spec: MlpSpec, params, x):
    """Evaluate the network on a single input vector.

    Works on numpy arrays and on tape variables alike.
    """
    if len(params) != spec.param_count:
        raise InvalidArgument(
            f"parameter slice has length {len(params)}, spec needs {spec.param_count}"
        )
    if len(x) != spec.input_dim:
        raise InvalidArgument(f"input has length {len(x)}, spec input_dim is {spec.input_dim}")
    s = spec.sizes
    h = x
    offset = 0
    n_layers = len(s) - 1
    for k in range(n_layers):
        fan_in, fan_out = s[k], s[k + 1]
        W = params[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
        offset += fan_in * fan_out
        b = params[offset:offset + fan_out]
        offset += fan_out
        h = W @ h + b
        if k < n_layers - 1:
            h = ad.tanh(h)
    if spec.output_activation == "softplus":
        h = ad.softplus(h)
    return h
