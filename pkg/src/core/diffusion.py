"""
Processo de difusão: amostragem direta, perda de treino, passo reverso e
amostragem ancestral condicionada ao genótipo.

Os modelos seguem o protocolo ``DenoiserModel``: ``predict_eps`` e ``backward``
aceitam lotes (N, D) com t e g escalares ou vetores de tamanho N.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Protocol, Tuple, Union

import numpy as np

from .schedule import NoiseSchedule, P2Params, make_linear_schedule
from ..utils.errors import ParameterError, ShapeError, ValidationError

WEIGHTING_SCHEMES = ("simple", "p2")


class DenoiserModel(Protocol):
    input_dim: int
    params: Dict[str, np.ndarray]

    def predict_eps(self, x: np.ndarray, t, g) -> np.ndarray:
        ...

    def backward(self, x: np.ndarray, t, g, upstream_grad: np.ndarray) -> Dict[str, np.ndarray]:
        ...


@dataclass
class Sample:
    """Vetor de dados (imagem achatada ou ponto) com rótulo de genótipo"""
    data: np.ndarray
    label: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("Sample contém valores não finitos")
        if isinstance(self.label, bool) or int(self.label) != self.label or self.label < 0:
            raise ValidationError(f"Rótulo inválido: {self.label!r}")
        self.label = int(self.label)

    @property
    def dim(self) -> int:
        return int(self.data.size)


@dataclass(frozen=True)
class LossConfig:
    """Configuração da perda: Loss = L_weighted + c·L_vlb"""
    weighting: str = "p2"
    c: float = 0.001
    p2: P2Params = field(default_factory=P2Params)

    def __post_init__(self):
        if self.weighting not in WEIGHTING_SCHEMES:
            raise ParameterError(f"Esquema de ponderação desconhecido: {self.weighting}")
        if not np.isfinite(self.c) or self.c < 0:
            raise ParameterError(f"c deve ser >= 0, recebido {self.c}")


def _as_array(x) -> np.ndarray:
    if isinstance(x, Sample):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _column(values, rows: int) -> np.ndarray:
    """Coeficientes por linha no formato (N, 1) para broadcast"""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        return values
    return values.reshape(rows, 1)


def forward_sample(s: NoiseSchedule, x0, t, eps) -> np.ndarray:
    """x_t = √ᾱ_t·x_0 + √(1-ᾱ_t)·ε"""
    x0 = _as_array(x0)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeError(f"eps com shape {eps.shape} incompatível com x0 {x0.shape}")
    a = s.alpha_bar(t)
    rows = x0.shape[0] if x0.ndim == 2 else 1
    a = _column(a, rows)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def posterior_coefficients(s: NoiseSchedule, t) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coeficientes de q(x_{t-1}|x_t,x_0): (coef_x0, coef_xt, variância)"""
    beta = s.beta(t)
    a = s.alpha_bar(t)
    a_prev = s.alpha_bar_prev(t)
    coef_x0 = np.sqrt(a_prev) * beta / (1.0 - a)
    coef_xt = np.sqrt(1.0 - beta) * (1.0 - a_prev) / (1.0 - a)
    return coef_x0, coef_xt, s.posterior_variance(t)


def posterior_params(s: NoiseSchedule, x0, xt, t) -> Tuple[np.ndarray, float]:
    """Média e variância de q(x_{t-1} | x_t, x_0); ᾱ_0 = 1"""
    x0 = _as_array(x0)
    xt = _as_array(xt)
    if x0.shape != xt.shape:
        raise ShapeError(f"x0 {x0.shape} e xt {xt.shape} com shapes diferentes")
    coef_x0, coef_xt, var = posterior_coefficients(s, t)
    rows = x0.shape[0] if x0.ndim == 2 else 1
    mean = _column(coef_x0, rows) * x0 + _column(coef_xt, rows) * xt
    if np.ndim(var) == 0:
        var = float(var)
    return mean, var


def step_weights(s: NoiseSchedule, cfg: LossConfig) -> np.ndarray:
    """Peso por passo (t=1..T) do termo de MSE"""
    if cfg.weighting == "p2":
        return s.p2_weights(cfg.p2)
    return s.simple_weights()


def vlb_coefficients(s: NoiseSchedule) -> np.ndarray:
    """
    Fator κ_t tal que KL(q(x_{t-1}|x_t,x_0) || p_θ(x_{t-1}|x_t)) = κ_t·‖ε - ε_θ‖².

    Com variância fixa σ², as médias diferem por C₁C₂(ε_θ - ε), logo
    κ_t = C₁²C₂²/(2σ²). σ² = β̃_t para t > 1; em t = 1 (β̃₁ = 0) o termo
    de decodificação usa σ² = β₁.
    """
    betas = s.betas
    c1_sq = 1.0 / (1.0 - betas)
    c2_sq = betas ** 2 / (1.0 - s.alpha_bars)
    var = np.array(s.posterior_variance(np.arange(1, s.T + 1)))
    var[0] = betas[0]
    return c1_sq * c2_sq / (2.0 * var)


def _stack_batch(batch: List[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    if not batch:
        raise ParameterError("Lote vazio")
    dims = {sample.dim for sample in batch}
    if len(dims) != 1:
        raise ShapeError(f"Amostras com dimensões diferentes no lote: {sorted(dims)}")
    x0 = np.stack([sample.data for sample in batch])
    labels = np.array([sample.label for sample in batch], dtype=np.int64)
    return x0, labels


def training_loss(model: DenoiserModel, s: NoiseSchedule, batch: List[Sample], cfg: LossConfig,
                  rng: np.random.Generator, return_terms: bool = False):
    """
    Perda de treino e gradientes.

    Para cada amostra sorteia t ~ U{1..T} e ε ~ N(0, I); a perda é a média no
    lote de (w_t + c·κ_t)·‖ε - ε_θ(x_t, t, g)‖²/D, onde w_t é o peso simples ou
    P2 e κ_t o fator do termo variacional (ver ``vlb_coefficients``).
    """
    x0, labels = _stack_batch(batch)
    n, dim = x0.shape

    t = rng.integers(1, s.T + 1, size=n)
    eps = rng.standard_normal((n, dim))
    xt = forward_sample(s, x0, t, eps)

    pred = np.asarray(model.predict_eps(xt, t, labels), dtype=np.float64)
    if pred.shape != xt.shape:
        raise ShapeError(f"Modelo retornou shape {pred.shape}, esperado {xt.shape}")

    diff = pred - eps
    sq = np.sum(diff ** 2, axis=1) / dim
    w = step_weights(s, cfg)[t - 1]
    kappa = vlb_coefficients(s)[t - 1]
    coef = w + cfg.c * kappa

    loss = float(np.mean(coef * sq))
    upstream = (2.0 / (n * dim)) * coef[:, None] * diff
    grads = model.backward(xt, t, labels, upstream)

    if return_terms:
        terms = {
            'weighted_mse': float(np.mean(w * sq)),
            'vlb': float(np.mean(kappa * sq)),
            'mse': float(np.mean(sq)),
        }
        return loss, grads, terms
    return loss, grads


def reverse_step(model: DenoiserModel, s: NoiseSchedule, xt, t: int, g, z,
                 final_noise: bool = False) -> np.ndarray:
    """
    Um passo reverso: x_{t-1} = C₁(x_t - C₂·ε_θ(x_t,t,g)) + σ_t·z.

    C₁ = 1/√(1-β_t), C₂ = β_t/√(1-ᾱ_t), σ_t = √β̃_t. Em t = 1 o termo de ruído
    é suprimido, a não ser que ``final_noise`` seja verdadeiro (σ₁ = √β₁).
    """
    xt = np.asarray(xt, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != xt.shape:
        raise ShapeError(f"z com shape {z.shape} incompatível com x_t {xt.shape}")
    if xt.shape[-1] != model.input_dim:
        raise ShapeError(f"x_t com dimensão {xt.shape[-1]}, modelo espera {model.input_dim}")

    beta = float(s.beta(t))
    a = float(s.alpha_bar(t))
    eps_hat = np.asarray(model.predict_eps(xt, t, g), dtype=np.float64)
    mean = (xt - beta / np.sqrt(1.0 - a) * eps_hat) / np.sqrt(1.0 - beta)

    if int(t) > 1:
        sigma = float(np.sqrt(s.posterior_variance(t)))
    elif final_noise:
        sigma = float(np.sqrt(beta))
    else:
        return mean
    return mean + sigma * z


def sample(model: DenoiserModel, s: NoiseSchedule, g: int, count: int, rng: np.random.Generator,
           final_noise: bool = False) -> List[np.ndarray]:
    """Amostragem ancestral de t = T até 1 a partir de x_T ~ N(0, I), condicionada em g"""
    if isinstance(count, bool) or int(count) != count or count < 1:
        raise ParameterError(f"count deve ser >= 1, recebido {count!r}")
    count = int(count)
    dim = model.input_dim
    labels = np.full(count, int(g), dtype=np.int64)

    x = rng.standard_normal((count, dim))
    for t in range(s.T, 0, -1):
        if t > 1 or final_noise:
            z = rng.standard_normal((count, dim))
        else:
            z = np.zeros((count, dim))
        x = reverse_step(model, s, x, t, labels, z, final_noise=final_noise)
    return [row.copy() for row in x]


class AnalyticGaussianDenoiser:
    """
    Denoiser exato para dados x_0 ~ N(m, s²·I).

    Com a = √ᾱ_t, b = √(1-ᾱ_t) e v = a²s² + b² (variância de x_t):
        E[x_0 | x_t] = (a·s²/v)·x_t + (b²/v)·m
        ε*(x_t, t)  = (x_t - a·E[x_0|x_t])/b = (b/v)·(x_t - a·m)
    O rótulo g é ignorado.
    """

    def __init__(self, m, s2: float, schedule: NoiseSchedule = None):
        if not np.isfinite(s2) or s2 < 0:
            raise ParameterError(f"s2 deve ser >= 0, recebido {s2}")
        self.m = np.asarray(m, dtype=np.float64).reshape(-1)
        self.s2 = float(s2)
        self.schedule = schedule if schedule is not None else make_linear_schedule()
        self.input_dim = int(self.m.size)
        self.params: Dict[str, np.ndarray] = {}

    def _terms(self, t, rows: int):
        abar = _column(self.schedule.alpha_bar(t), rows)
        a = np.sqrt(abar)
        b2 = 1.0 - abar
        v = abar * self.s2 + b2
        return a, b2, v

    def posterior_mean_coefficients(self, t) -> Tuple[float, np.ndarray]:
        """(inclinação, intercepto) de E[x_0 | x_t] = inclinação·x_t + intercepto"""
        a, b2, v = self._terms(t, 1)
        return float(a * self.s2 / v), (b2 / v) * self.m

    def predict_eps(self, x, t, g=None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        rows = x.shape[0] if x.ndim == 2 else 1
        a, b2, v = self._terms(t, rows)
        return np.sqrt(b2) / v * (x - a * self.m)

    def backward(self, x, t, g, upstream_grad) -> Dict[str, np.ndarray]:
        return {}


def analytic_gaussian_denoiser(m, s2: float, schedule: NoiseSchedule = None) -> AnalyticGaussianDenoiser:
    """Oráculo ε* exato para prior gaussiano N(m, s²·I)"""
    return AnalyticGaussianDenoiser(m, s2, schedule)
