"""
Agenda de ruído da difusão.

Concentra todas as constantes por passo do processo direto: β_t, ᾱ_t, SNR(t)
e os pesos da perda (simples e P2). O índice público t é 1..T.
"""
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from ..utils.errors import ParameterError, TimestepIndexError

DEFAULT_STEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class P2Params:
    """Parâmetros da ponderação P2: λ'_t = λ_t / (k + SNR(t))^γ"""
    k: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.k) or self.k < 0:
            raise ParameterError(f"p2 k deve ser >= 0, recebido {self.k}")
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ParameterError(f"p2 gamma deve ser >= 0, recebido {self.gamma}")


class NoiseSchedule:
    """Agenda imutável de β_t e ᾱ_t"""

    def __init__(self, betas, beta_start: float = None, beta_end: float = None):
        betas = np.array(betas, dtype=np.float64).reshape(-1)
        if betas.size == 0:
            raise ParameterError("A agenda precisa de pelo menos um passo")
        if not np.all((betas > 0) & (betas < 1)):
            raise ParameterError("Todos os β_t devem estar em (0, 1)")

        # ᾱ_t = ᾱ_{t-1}·(1-β_t), multiplicação sequencial
        alpha_bars = np.cumprod(1.0 - betas)
        alpha_bars_prev = np.concatenate(([1.0], alpha_bars[:-1]))
        posterior_variance = betas * (1.0 - alpha_bars_prev) / (1.0 - alpha_bars)

        for arr in (betas, alpha_bars, alpha_bars_prev, posterior_variance):
            arr.flags.writeable = False

        self._betas = betas
        self._alpha_bars = alpha_bars
        self._alpha_bars_prev = alpha_bars_prev
        self._posterior_variance = posterior_variance
        self.beta_start = float(betas[0]) if beta_start is None else float(beta_start)
        self.beta_end = float(betas[-1]) if beta_end is None else float(beta_end)

    @property
    def T(self) -> int:
        return int(self._betas.size)

    @property
    def betas(self) -> np.ndarray:
        return self._betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return self._alpha_bars

    def _index(self, t) -> int:
        if isinstance(t, (bool, np.bool_)) or int(t) != t:
            raise TimestepIndexError(f"Passo t deve ser inteiro, recebido {t!r}")
        t = int(t)
        if t < 1 or t > self.T:
            raise TimestepIndexError(f"Passo t={t} fora do intervalo 1..{self.T}")
        return t - 1

    def _indices(self, t) -> np.ndarray:
        """Versão vetorizada de _index (aceita escalar ou array)"""
        t = np.asarray(t)
        if t.dtype.kind not in "iu":
            if not np.all(np.equal(np.mod(t, 1), 0)):
                raise TimestepIndexError("Passos t devem ser inteiros")
            t = t.astype(np.int64)
        if np.any(t < 1) or np.any(t > self.T):
            raise TimestepIndexError(f"Passo t fora do intervalo 1..{self.T}")
        return t - 1

    def beta(self, t) -> np.ndarray:
        return self._betas[self._indices(t)]

    def alpha_bar(self, t) -> np.ndarray:
        """ᾱ_t para t em 1..T"""
        return self._alpha_bars[self._indices(t)]

    def alpha_bar_prev(self, t) -> np.ndarray:
        """ᾱ_{t-1}, com ᾱ_0 = 1"""
        return self._alpha_bars_prev[self._indices(t)]

    def posterior_variance(self, t) -> np.ndarray:
        """β̃_t = (1-ᾱ_{t-1})/(1-ᾱ_t)·β_t"""
        return self._posterior_variance[self._indices(t)]

    def snr(self, t) -> float:
        i = self._index(t)
        a = self._alpha_bars[i]
        return float(a / (1.0 - a))

    def simple_weight(self, t) -> float:
        i = self._index(t)
        b = self._betas[i]
        return float((1.0 - b) * (1.0 - self._alpha_bars[i]) / b)

    def p2_weight(self, t, p: P2Params) -> float:
        lam = self.simple_weight(t)
        if p.gamma == 0:
            return lam
        return float(lam / (p.k + self.snr(t)) ** p.gamma)

    def snr_all(self) -> np.ndarray:
        """SNR(t) para t = 1..T"""
        return self._alpha_bars / (1.0 - self._alpha_bars)

    def simple_weights(self) -> np.ndarray:
        return (1.0 - self._betas) * (1.0 - self._alpha_bars) / self._betas

    def p2_weights(self, p: P2Params) -> np.ndarray:
        lam = self.simple_weights()
        if p.gamma == 0:
            return lam
        return lam / (p.k + self.snr_all()) ** p.gamma

    def to_dict(self) -> Dict[str, Any]:
        """Parâmetros serializáveis (checkpoint e config)"""
        return {'steps': self.T, 'beta_start': self.beta_start, 'beta_end': self.beta_end}

    def __repr__(self):
        return f"NoiseSchedule(T={self.T}, beta_start={self.beta_start}, beta_end={self.beta_end})"


def make_linear_schedule(T: int = DEFAULT_STEPS, beta_start: float = DEFAULT_BETA_START,
                         beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Agenda linear: β_t interpolado de beta_start (t=1) a beta_end (t=T)"""
    if isinstance(T, bool) or int(T) != T or T < 1:
        raise ParameterError(f"T deve ser inteiro >= 1, recebido {T!r}")
    if not (0 < beta_start <= beta_end < 1):
        raise ParameterError(
            f"Intervalo inválido: exige 0 < beta_start <= beta_end < 1 (recebido {beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    return NoiseSchedule(betas, beta_start=beta_start, beta_end=beta_end)


def snr(s: NoiseSchedule, t: int) -> float:
    """SNR(t) = ᾱ_t / (1 - ᾱ_t)"""
    return s.snr(t)


def simple_weight(s: NoiseSchedule, t: int) -> float:
    """λ_t = (1-β_t)(1-ᾱ_t)/β_t"""
    return s.simple_weight(t)


def p2_weight(s: NoiseSchedule, t: int, p: P2Params) -> float:
    """λ'_t = λ_t / (k + SNR(t))^γ"""
    return s.p2_weight(t, p)
