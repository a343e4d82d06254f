"""
Theta-схема Эйлера–Маруямы для уравнений с запаздыванием.

Шаг на сетке t_n = n·h (τ = m·h, T = N·h):

    X_{n+1} − θhF(X_{n+1}, X_{n+1−m}) = X_n + (1−θ)hF(X_n, X_{n−m}) + ε g(X_n, X_{n−m}) ΔW_n

F: исходный снос либо укрощённый f/(1 + h_c^δ|f|) с h_c = M·h.
Все массивы пакетные: (пути, a); значения только в узлах сетки.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .config import cfg
from .errors import (
    AdmissibilityError,
    ConfigError,
    GridAlignmentError,
    NonConvergence,
    NoiseIndexError,
)
from .models import Array, DriftFn, GlobalLipschitz, GridSpec, SddeProblem
from .problems import derived_constants
from .rng import NoiseStream, stack_normals

DEFAULT_DELTA = 0.5

_FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)
_MAX_HALVINGS = 30
_ALIGN_RTOL = 4.0 * np.finfo(float).eps


# ---------- укрощение сноса ----------
def tame_drift(f_value: Array, h_coarse: float, delta: float) -> Array:
    """f / (1 + h_c^δ·|f|); норма результата ≤ min(|f|, h_c^{−δ})."""
    f_value = np.asarray(f_value, dtype=float)
    norm = np.linalg.norm(f_value, axis=-1, keepdims=True)
    return f_value / (1.0 + h_coarse ** delta * norm)


@dataclass(frozen=True)
class TamedDrift:
    base: DriftFn
    h_coarse: float
    delta: float = DEFAULT_DELTA

    def __post_init__(self) -> None:
        if not self.h_coarse > 0.0:
            raise ConfigError(f"TamedDrift: h_coarse={self.h_coarse} должно быть > 0")
        if not 0.0 < self.delta <= 0.5:
            raise ConfigError(f"TamedDrift: δ={self.delta} вне (0, 1/2]")

    def __call__(self, x: Array, y: Array) -> Array:
        return tame_drift(self.base(x, y), self.h_coarse, self.delta)


def taming_for(
    problem: SddeProblem, step: float, delta: Optional[float], M: int
) -> Optional[TamedDrift]:
    """Путь с шагом h укрощается с h_c = M·h (мелкий h_l → h_{l−1}, грубый h_{l−1} → h_{l−2})."""
    if delta is None:
        return None
    return TamedDrift(problem.drift, M * step, delta)


# ---------- неявный шаг ----------
def _residual_norm(x: Array, y: Array, d: Array, drift: DriftFn, th: float) -> Array:
    return np.linalg.norm(x - th * drift(x, d) - y, axis=-1)


def _fd_jacobian(drift: DriftFn, x: Array, d: Array) -> Array:
    a = x.shape[-1]
    jac = np.empty(x.shape + (a,))
    for j in range(a):
        step = _FD_STEP * np.maximum(1.0, np.abs(x[..., j]))
        xp = x.copy()
        xm = x.copy()
        xp[..., j] += step
        xm[..., j] -= step
        jac[..., :, j] = (drift(xp, d) - drift(xm, d)) / (2.0 * step)[..., None]
    return jac


def _not_converged(rn: Array, scale: Array) -> Array:
    return np.flatnonzero(~(np.atleast_1d(rn) <= np.atleast_1d(scale)))


def _fixed_point(y, d, drift, th, scale, max_iter):
    x = y
    rn = np.full(np.shape(scale), np.inf)
    for _ in range(max_iter):
        fx = drift(x, d)
        rn = np.linalg.norm(x - th * fx - y, axis=-1)
        done = rn <= scale
        if np.all(done):
            return x
        if not np.all(np.isfinite(rn)):
            break
        # сошедшиеся строки замораживаются: путь не зависит от соседей по пакету
        x = np.where(done[..., None], x, y + th * fx)
    raise NonConvergence(max_iter, float(np.nanmax(rn)), _not_converged(rn, scale))


def _damped_newton(y, d, drift, th, scale, max_iter):
    x = y.copy()
    eye = np.eye(y.shape[-1])
    rn = np.full(np.shape(scale), np.inf)
    for _ in range(max_iter):
        rn = _residual_norm(x, y, d, drift, th)
        done = rn <= scale
        if np.all(done):
            return x
        if not np.all(np.isfinite(rn)):
            break
        g = x - th * drift(x, d) - y
        try:
            step = np.linalg.solve(eye - th * _fd_jacobian(drift, x, d), g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        lam = np.ones(np.shape(rn))
        cand = x - step
        for _ in range(_MAX_HALVINGS):
            cn = _residual_norm(cand, y, d, drift, th)
            worse = ~(cn < rn) & ~done
            if not worse.any():
                break
            lam = np.where(worse, 0.5 * lam, lam)
            cand = x - lam[..., None] * step
        x = np.where(done[..., None], x, cand)
    raise NonConvergence(max_iter, float(np.nanmax(rn)), _not_converged(rn, scale))


def implicit_step_solve(
    y_target: Array,
    delayed: Array,
    effective_drift: DriftFn,
    theta: float,
    h: float,
    *,
    lipschitz: Optional[float] = None,
    tol_abs: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> Array:
    """
    Решить x − θhF(x, delayed) = y_target.

    При сертификате сжатия θhL < 1 используется простая итерация x ← y + θhF(x, d),
    иначе демпфированный Ньютон с разностным якобианом.
    Критерий остановки: |невязка| ≤ tol_abs·max(1, |y_target|) в каждой строке.
    """
    y = np.asarray(y_target, dtype=float)
    if theta == 0.0:
        return y
    d = np.asarray(delayed, dtype=float)
    tol = cfg.solver_tol if tol_abs is None else tol_abs
    iters = cfg.solver_max_iter if max_iter is None else max_iter
    th = theta * h
    scale = tol * np.maximum(1.0, np.linalg.norm(y, axis=-1))
    if lipschitz is not None and th * lipschitz < 1.0:
        return _fixed_point(y, d, effective_drift, th, scale, iters)
    return _damped_newton(y, d, effective_drift, th, scale, iters)


# ---------- буфер истории ----------
class DelayBuffer:
    """
    История пакета путей по индексам n ∈ {−m, …, N}.
    history[:, n + m] = X(t_n); на [−m, 0] лежат значения начального отрезка ξ(n·h).
    """

    def __init__(self, n_paths: int, m: int, N: int, dim: int) -> None:
        self.m = m
        self.N = N
        self.history = np.empty((n_paths, m + N + 1, dim))
        self.last = -m - 1  # последний заполненный индекс

    @classmethod
    def from_initial(cls, problem: SddeProblem, grid: GridSpec, n_paths: int) -> "DelayBuffer":
        buf = cls(n_paths, grid.steps_per_delay_m, grid.total_steps_N, problem.dim_state)
        for n in range(-grid.steps_per_delay_m, 1):
            value = np.asarray(problem.initial_segment(n * grid.step_h), dtype=float)
            buf.history[:, n + buf.m] = value.reshape(problem.dim_state)
        buf.last = 0
        return buf

    @property
    def n_paths(self) -> int:
        return self.history.shape[0]

    def lookup(self, n: int) -> Array:
        if not -self.m <= n <= self.last:
            raise NoiseIndexError(f"индекс {n} вне заполненной истории [{-self.m}, {self.last}]")
        return self.history[:, n + self.m]

    def push(self, value: Array) -> None:
        if self.last >= self.N:
            raise NoiseIndexError(f"буфер заполнен до N={self.N}")
        self.last += 1
        self.history[:, self.last + self.m] = value

    def values(self) -> Array:
        """X(t_0..t_N), форма (пути, N+1, a)."""
        return self.history[:, self.m:]

    def terminal(self) -> Array:
        return self.history[:, -1]


# ---------- сетки и допустимость ----------
def _aligned_count(length: float, h: float, what: str) -> int:
    count = int(round(length / h))
    if count < 1 or not math.isclose(count * h, length, rel_tol=_ALIGN_RTOL, abs_tol=0.0):
        raise GridAlignmentError(f"{what}={length} не кратно шагу h={h}")
    return count


def make_grid(
    problem: SddeProblem, h: float, theta: float, level: Optional[int] = None, M: int = 1
) -> GridSpec:
    if not h > 0.0:
        raise ConfigError(f"шаг h={h} должен быть > 0")
    if not 0.0 <= theta <= 1.0:
        raise ConfigError(f"θ={theta} вне [0, 1]")
    m = _aligned_count(problem.delay, h, "τ")
    N = _aligned_count(problem.horizon, h, "T")
    return GridSpec(
        step_h=h, steps_per_delay_m=m, total_steps_N=N, theta=theta, level=level, refinement_M=M
    )


def grid_for_level(problem: SddeProblem, level: int, M: int, theta: float) -> GridSpec:
    """h_l = T·M^{−l}."""
    if level < 0:
        raise ConfigError(f"уровень {level} должен быть ≥ 0")
    return make_grid(problem, problem.horizon * float(M) ** (-level), theta, level=level, M=M)


def check_admissible(problem: SddeProblem, step: float, theta: float) -> None:
    """
    GlobalLipschitz: θ > 0 → θ·h < 1/(ᾱ∨6β); θ = 0 → h < 1.
    OneSidedLipschitz: θ > 0 → θ·h < 2/α₁ (для грубого пути это θ·h_{l−1} < 2/α₁).
    """
    consts = derived_constants(problem)
    if isinstance(problem.regularity, GlobalLipschitz):
        if theta > 0.0:
            bound = 1.0 / max(consts["alpha_bar"], 6.0 * consts["beta"])
            if not theta * step < bound:
                raise AdmissibilityError(
                    "θ·h < 1/(ᾱ∨6β)",
                    f"θ={theta}, h={step}: θ·h={theta * step:.6g} ≥ {bound:.6g} "
                    f"(ᾱ={consts['alpha_bar']:.6g}, β={consts['beta']:.6g})",
                )
        elif not step < 1.0:
            raise AdmissibilityError("h < 1", f"явная схема, h={step}")
        return
    if theta > 0.0:
        bound = 2.0 / consts["alpha1"]
        if not theta * step < bound:
            raise AdmissibilityError(
                "θ·h_{l−1} < 2/α₁",
                f"θ={theta}, h={step}: θ·h={theta * step:.6g} ≥ {bound:.6g} "
                f"(α₁={consts['alpha1']:.6g})",
            )


def check_taming(
    problem: SddeProblem, taming: Optional[TamedDrift], require_taming: bool = True
) -> None:
    if problem.is_one_sided and taming is None and require_taming:
        raise ConfigError(
            f"{problem.name}: односторонний Липшиц требует укрощённого сноса (задайте δ)"
        )


# ---------- шаг схемы ----------
class ThetaStepper:
    """Один шаг theta-схемы с фиксированными (h, θ, F)."""

    def __init__(
        self, problem: SddeProblem, h: float, theta: float, taming: Optional[TamedDrift] = None
    ) -> None:
        self.problem = problem
        self.h = h
        self.theta = theta
        self.eps = problem.noise_scale
        self.drift: DriftFn = taming if taming is not None else problem.drift
        # |f_h(x)−f_h(x̄)| ≤ |f(x)−f(x̄)|, поэтому α годится и для укрощённого сноса
        reg = problem.regularity
        self.lipschitz = reg.alpha if isinstance(reg, GlobalLipschitz) else None

    def advance(self, x: Array, x_delay: Array, x_delay_next: Array, dW: Optional[Array]) -> Array:
        fx = self.drift(x, x_delay)
        y = x + (1.0 - self.theta) * self.h * fx
        if dW is not None and self.eps != 0.0:
            g = self.problem.diffusion(x, x_delay)
            y = y + self.eps * np.einsum("...ij,...j->...i", g, dW)
        return implicit_step_solve(
            y, x_delay_next, self.drift, self.theta, self.h, lipschitz=self.lipschitz
        )


def integrate_theta_em(
    problem: SddeProblem,
    grid: GridSpec,
    increments: Optional[Array],
    taming: Optional[TamedDrift] = None,
    *,
    require_taming: bool = True,
    n_paths: int = 1,
) -> DelayBuffer:
    """
    Проинтегрировать пакет путей по готовым приращениям ΔW формы (пути, N, d).
    increments=None: без шумового слагаемого (детерминированный скелет).
    """
    check_taming(problem, taming, require_taming)
    check_admissible(problem, grid.step_h, grid.theta)
    N, m = grid.total_steps_N, grid.steps_per_delay_m
    if increments is not None:
        if increments.ndim != 3 or increments.shape[1:] != (N, problem.dim_noise):
            raise GridAlignmentError(
                f"приращения формы {increments.shape}, ожидается (P, {N}, {problem.dim_noise})"
            )
        n_paths = increments.shape[0]
    stepper = ThetaStepper(problem, grid.step_h, grid.theta, taming)
    buf = DelayBuffer.from_initial(problem, grid, n_paths)
    for n in range(N):
        dW = None if increments is None else increments[:, n]
        buf.push(stepper.advance(buf.lookup(n), buf.lookup(n - m), buf.lookup(n + 1 - m), dW))
    return buf


def theta_em_path(
    problem: SddeProblem,
    grid: GridSpec,
    noise: Union[NoiseStream, Sequence[NoiseStream]],
    taming: Optional[TamedDrift] = None,
    *,
    require_taming: bool = True,
) -> DelayBuffer:
    """Путь(и) theta-схемы на шуме ΔW_n = √h·ξ_n из потоков noise."""
    streams = [noise] if isinstance(noise, NoiseStream) else list(noise)
    xi = stack_normals(streams)
    if xi.shape[1] != grid.total_steps_N:
        raise GridAlignmentError(
            f"поток шума содержит {xi.shape[1]} приращений, "
            f"а сетке нужно {grid.total_steps_N} шагов"
        )
    return integrate_theta_em(
        problem, grid, math.sqrt(grid.step_h) * xi, taming, require_taming=require_taming
    )
