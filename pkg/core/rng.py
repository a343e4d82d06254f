"""
Адресуемый по счётчику источник гауссовых приращений.

Ключ Philox выводится из (master_seed, level, path_index, lane) через
SeedSequence; приращение ξ_n^k занимает d 64-битных слов, начиная со слова
(n·substeps + k)·d. Нормальные величины берутся через обратную функцию
стандартного нормального распределения (ndtri) от равномерных на открытом
интервале (0, 1), поэтому любое приращение
вычисляется независимо от порядка обращений и от планирования потоков.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError, NoiseIndexError

_MASK64 = (1 << 64) - 1
_WORDS_PER_BLOCK = 4  # Philox4x64 выдаёт 4 слова на значение счётчика


def _uniforms(raw: np.ndarray) -> np.ndarray:
    # 53 старших бита + половина младшего разряда: строго внутри (0, 1)
    return (np.right_shift(raw, np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


@dataclass(frozen=True)
class NoiseStream:
    """Поток шума одного пути: сетка n ∈ [0, n_steps), k ∈ [0, substeps), вектор R^d."""

    master_seed: int
    level: int
    path_index: int
    dim_noise: int
    n_steps: int
    substeps: int = 1
    lane: int = 0

    def __post_init__(self) -> None:
        if self.dim_noise < 1 or self.n_steps < 1 or self.substeps < 1:
            raise ConfigError(
                f"NoiseStream: d={self.dim_noise}, n_steps={self.n_steps}, "
                f"substeps={self.substeps} должны быть ≥ 1"
            )
        if self.level < 0 or self.path_index < 0 or self.lane < 0:
            raise ConfigError("NoiseStream: level, path_index, lane должны быть ≥ 0")

    @classmethod
    def for_level(
        cls, master_seed: int, level: int, path_index: int, dim_noise: int, M: int, lane: int = 0
    ) -> "NoiseStream":
        """Раскладка уровня l: M^{l−1} грубых шагов по M подшагов (M^l мелких приращений)."""
        if level == 0:
            return cls(master_seed, 0, path_index, dim_noise, 1, 1, lane)
        return cls(master_seed, level, path_index, dim_noise, M ** (level - 1), M, lane)

    @property
    def total_increments(self) -> int:
        return self.n_steps * self.substeps

    def key(self) -> np.ndarray:
        seq = np.random.SeedSequence(
            [int(self.master_seed) & _MASK64, self.level, self.path_index, self.lane]
        )
        return seq.generate_state(2, dtype=np.uint64)

    def _raw(self, first_word: int, count: int) -> np.ndarray:
        block, skip = divmod(first_word, _WORDS_PER_BLOCK)
        bitgen = np.random.Philox(key=self.key(), counter=block)
        return bitgen.random_raw(skip + count)[skip:]

    def block(self) -> np.ndarray:
        """Все ξ потока, форма (n_steps·substeps, d)."""
        words = self.total_increments * self.dim_noise
        return ndtri(_uniforms(self._raw(0, words))).reshape(self.total_increments, self.dim_noise)

    def check_index(self, n: int, k: int) -> None:
        if not (0 <= n < self.n_steps and 0 <= k < self.substeps):
            raise NoiseIndexError(
                f"индекс (n={n}, k={k}) вне сетки потока "
                f"[0, {self.n_steps}) × [0, {self.substeps})"
            )


def gaussian_increment(stream: NoiseStream, n: int, k: int = 0) -> np.ndarray:
    """ξ_n^k ∈ R^d с независимыми N(0, 1) компонентами; повторный вызов даёт тот же вектор."""
    stream.check_index(n, k)
    first = (n * stream.substeps + k) * stream.dim_noise
    return ndtri(_uniforms(stream._raw(first, stream.dim_noise)))


def coarse_increment(stream: NoiseStream, n: int, M: int) -> np.ndarray:
    """Σ_{k<M} ξ_n^k: точная сумма мелких приращений грубого шага n (слева направо)."""
    if M < 1 or M > stream.substeps:
        raise NoiseIndexError(f"M={M} вне [1, {stream.substeps}]")
    acc = gaussian_increment(stream, n, 0)
    for k in range(1, M):
        acc = acc + gaussian_increment(stream, n, k)
    return acc


def stack_normals(streams: Sequence[NoiseStream]) -> np.ndarray:
    """Пакет ξ для набора путей, форма (пути, n_steps·substeps, d)."""
    if not streams:
        raise ConfigError("пустой набор потоков шума")
    return np.stack([s.block() for s in streams])


def aggregate_increments(increments: np.ndarray, factor: int) -> np.ndarray:
    """
    Сложить группы из factor подряд идущих приращений по оси 1.
    Суммирование строго слева направо, как в coarse_increment.
    """
    if factor == 1:
        return increments
    n_total = increments.shape[1]
    if n_total % factor:
        raise NoiseIndexError(f"{n_total} приращений не делятся на группы по {factor}")
    n_paths, rest = increments.shape[0], increments.shape[2:]
    grouped = increments.reshape(n_paths, n_total // factor, factor, *rest)
    acc = grouped[:, :, 0]
    for k in range(1, factor):
        acc = acc + grouped[:, :, k]
    return acc


def level_streams(
    master_seed: int, level: int, first_path: int, count: int, dim_noise: int, M: int, lane: int = 0
) -> list:
    return [
        NoiseStream.for_level(master_seed, level, first_path + i, dim_noise, M, lane)
        for i in range(count)
    ]
