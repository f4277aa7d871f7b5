"""Benchmark joint densities."""
from .banana import Banana, banana_target
from .base import TargetDensity
from .diffusion import Diffusion1D, diffusion1d_target, solve_diffusion
from .linear_gaussian import LinearGaussian, gaussian_hellinger, linear_gaussian_target, random_linear_gaussian
from .ode import OdeError, dopri45, rk4_fixed
from .sir import SirModel, sir_target, solve_sir

__all__ = [
    "TargetDensity",
    "Banana",
    "banana_target",
    "Diffusion1D",
    "diffusion1d_target",
    "solve_diffusion",
    "LinearGaussian",
    "linear_gaussian_target",
    "random_linear_gaussian",
    "gaussian_hellinger",
    "SirModel",
    "sir_target",
    "solve_sir",
    "dopri45",
    "rk4_fixed",
    "OdeError",
    "make_model",
]


def make_model(name, **params):
    """Model preset by name: ``sir``, ``lingauss``, ``diffusion1d`` or ``banana``."""
    if name == "sir":
        return sir_target(**params)
    if name == "lingauss":
        params = dict(params)
        if "G" in params:
            return linear_gaussian_target(**params)
        return random_linear_gaussian(params.pop("d_y", 3), params.pop("d_theta", 4), **params)
    if name == "diffusion1d":
        return diffusion1d_target(**params)
    if name == "banana":
        return banana_target(**params)
    raise KeyError(f"unknown model {name!r}")
