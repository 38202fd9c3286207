"""Parameter storage, dense networks and reverse-mode gradients."""

from dilar.netcore.autodiff import GradResult, Var, gradient_of, relu, softplus, tanh
from dilar.netcore.mlp import MlpSpec, init_params, mlp_forward
from dilar.netcore.params import ParamStore

__all__ = [
    "GradResult",
    "MlpSpec",
    "ParamStore",
    "Var",
    "gradient_of",
    "init_params",
    "mlp_forward",
    "relu",
    "softplus",
    "tanh",
]
