"""
Встроенные задачи и функционалы.

Константы Липшица объявлены аналитически по коэффициентам;
тесты перепроверяют их выборкой случайных пар.
"""

from __future__ import annotations

from typing import Callable, Dict, Mapping, Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigError, RegistryError
from .models import GlobalLipschitz, OneSidedLipschitz, Payoff, SddeProblem

# (H) требует α > 1 строго
ALPHA_FLOOR = 1.01

_COMMON_DEFAULTS = {"tau": 0.25, "T": 1.0, "eps": 0.1, "x0": 1.0}


def _origin_norms(problem: SddeProblem) -> tuple:
    zero = np.zeros(problem.dim_state)
    f00 = float(np.linalg.norm(problem.drift(zero, zero)))
    g00 = float(np.linalg.norm(problem.diffusion(zero, zero)))
    return f00, g00


def derived_constants(problem: SddeProblem) -> Dict[str, float]:
    """
    GlobalLipschitz: β = max{α, |f(0,0)|, |g(0,0)|}, ᾱ = 1/2 + α².
    OneSidedLipschitz: заявленные α₁, α₂, α₃, r, p и производные
    ᾱ₁ = α₁ ∨ ½|f(0,0)|², ᾱ₂ = (α₂ + |f(0,0)|)^{2p}.
    """
    f00, g00 = _origin_norms(problem)
    reg = problem.regularity
    if isinstance(reg, GlobalLipschitz):
        return {
            "alpha": reg.alpha,
            "beta": max(reg.alpha, f00, g00),
            "alpha_bar": 0.5 + reg.alpha ** 2,
        }
    return {
        "alpha1": reg.alpha1,
        "alpha2": reg.alpha2,
        "alpha3": reg.alpha3,
        "r": reg.growth_r,
        "p": reg.p,
        "alpha1_bar": max(reg.alpha1, 0.5 * f00 ** 2),
        "alpha2_bar": (reg.alpha2 + f00) ** (2.0 * reg.p),
    }


def _constant_segment(x0: float, dim: int) -> Callable[[float], np.ndarray]:
    value = np.full(dim, float(x0))

    def segment(theta: float) -> np.ndarray:
        return value.copy()

    return segment


def _dim(c: Mapping[str, float]) -> int:
    dim = int(c["dim"])
    if dim != c["dim"] or dim < 1:
        raise ConfigError(f"dim={c['dim']} должно быть натуральным числом")
    return dim


# ---------- фабрики ----------
def _linear_scalar(c: Mapping[str, float]) -> SddeProblem:
    a1, a2, b1, b2 = c["a1"], c["a2"], c["b1"], c["b2"]

    def drift(x, y):
        return a1 * x + a2 * y

    def diffusion(x, y):
        return (b1 * x + b2 * y)[..., None]

    alpha = max(abs(a1) + abs(b1), abs(a2) + abs(b2), ALPHA_FLOOR)
    return SddeProblem(
        name="linear_scalar",
        dim_state=1,
        dim_noise=1,
        drift=drift,
        diffusion=diffusion,
        delay=c["tau"],
        horizon=c["T"],
        noise_scale=c["eps"],
        initial_segment=_constant_segment(c["x0"], 1),
        regularity=GlobalLipschitz(alpha=alpha),
        coefficients=dict(c),
    )


def _additive_noise(c: Mapping[str, float]) -> SddeProblem:
    a1, a2, sigma = c["a1"], c["a2"], c["sigma"]
    dim = _dim(c)
    g_const = sigma * np.eye(dim)

    def drift(x, y):
        return a1 * x + a2 * y

    def diffusion(x, y):
        return np.broadcast_to(g_const, np.shape(x)[:-1] + (dim, dim))

    return SddeProblem(
        name="additive_noise",
        dim_state=dim,
        dim_noise=dim,
        drift=drift,
        diffusion=diffusion,
        delay=c["tau"],
        horizon=c["T"],
        noise_scale=c["eps"],
        initial_segment=_constant_segment(c["x0"], dim),
        regularity=GlobalLipschitz(alpha=max(abs(a1), abs(a2), ALPHA_FLOOR)),
        coefficients=dict(c),
    )


def _cubic_onesided(c: Mapping[str, float]) -> SddeProblem:
    coupling, sigma, p = c["c"], c["sigma"], c["p"]

    def drift(x, y):
        return -x ** 3 + coupling * y

    def diffusion(x, y):
        return (sigma * np.sqrt(1.0 + x * x))[..., None]

    # 2⟨Δx, Δf⟩ ≤ |c|(|Δx|²+|Δy|²), |Δg|² ≤ σ²|Δx|²; запас +1 даёт α₁ > 1 при ε ≤ 1
    regularity = OneSidedLipschitz(
        alpha1=1.0 + abs(coupling) + (p - 1.0) * sigma ** 2,
        alpha2=1.5 + abs(coupling),
        alpha3=max(sigma ** 2, 1e-12),
        growth_r=2.0,
        p=p,
    )
    return SddeProblem(
        name="cubic_onesided",
        dim_state=1,
        dim_noise=1,
        drift=drift,
        diffusion=diffusion,
        delay=c["tau"],
        horizon=c["T"],
        noise_scale=c["eps"],
        initial_segment=_constant_segment(c["x0"], 1),
        regularity=regularity,
        coefficients=dict(c),
    )


def _zero_dynamics(c: Mapping[str, float]) -> SddeProblem:
    dim = _dim(c)

    def drift(x, y):
        return np.zeros_like(x)

    def diffusion(x, y):
        return np.zeros(np.shape(x)[:-1] + (dim, dim))

    return SddeProblem(
        name="zero_dynamics",
        dim_state=dim,
        dim_noise=dim,
        drift=drift,
        diffusion=diffusion,
        delay=c["tau"],
        horizon=c["T"],
        noise_scale=c["eps"],
        initial_segment=_constant_segment(c["x0"], dim),
        regularity=GlobalLipschitz(alpha=ALPHA_FLOOR),
        coefficients=dict(c),
    )


PROBLEMS: Dict[str, tuple] = {
    "linear_scalar": (_linear_scalar, {"a1": -1.0, "a2": 0.5, "b1": 0.1, "b2": 0.1}),
    "additive_noise": (_additive_noise, {"a1": -1.0, "a2": 0.5, "sigma": 1.0, "dim": 1}),
    "cubic_onesided": (_cubic_onesided, {"c": 0.5, "sigma": 0.5, "p": 2.0}),
    "zero_dynamics": (_zero_dynamics, {"dim": 1}),
}


def problem_defaults(name: str) -> Dict[str, float]:
    if name not in PROBLEMS:
        raise RegistryError("задачи", name, PROBLEMS.keys())
    return {**_COMMON_DEFAULTS, **PROBLEMS[name][1]}


def builtin_problem(name: str, overrides: Optional[Mapping[str, float]] = None) -> SddeProblem:
    """Построить встроенную задачу с (необязательной) заменой коэффициентов."""
    coefficients = problem_defaults(name)
    for key, value in (overrides or {}).items():
        if key not in coefficients:
            raise ConfigError(
                f"задача '{name}' не имеет коэффициента '{key}'; "
                f"доступны: {', '.join(sorted(coefficients))}"
            )
        coefficients[key] = float(value)
    factory = PROBLEMS[name][0]
    return factory(coefficients)


# ---------- функционалы Ψ ----------
def _first(x: np.ndarray) -> np.ndarray:
    return x[..., 0]


PAYOFFS: Dict[str, Payoff] = {
    "identity": Payoff(eval=_first, derivative_bound=1.0, name="identity"),
    "sigmoid": Payoff(eval=lambda x: expit(x[..., 0]), derivative_bound=0.25, name="sigmoid"),
    "tanh": Payoff(eval=lambda x: np.tanh(x[..., 0]), derivative_bound=1.0, name="tanh"),
    "constant": Payoff(
        eval=lambda x: np.ones(np.shape(x)[:-1]), derivative_bound=0.0, name="constant"
    ),
}


def builtin_payoff(name: str) -> Payoff:
    try:
        return PAYOFFS[name]
    except KeyError:
        raise RegistryError("функционала", name, PAYOFFS.keys()) from None
