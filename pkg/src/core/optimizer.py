"""
Otimizador Adam com correção de viés.
"""
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from ..utils.errors import ParameterError, ShapeError

DEFAULT_LR = 1e-4


@dataclass
class OptimizerState:
    """Momentos de Adam por parâmetro, contador de passos e constantes"""
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ParameterError(f"lr deve ser > 0, recebido {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("beta1 e beta2 devem estar em [0, 1)")
        if self.eps <= 0:
            raise ParameterError(f"eps deve ser > 0, recebido {self.eps}")

    @classmethod
    def for_model(cls, model, **kwargs) -> "OptimizerState":
        """Estado zerado com momentos no formato dos parâmetros do modelo"""
        state = cls(**kwargs)
        state.m = {name: np.zeros_like(p) for name, p in model.params.items()}
        state.v = {name: np.zeros_like(p) for name, p in model.params.items()}
        return state


def adam_step(model, state: OptimizerState, grads: Dict[str, np.ndarray],
              float32_params: bool = True) -> Tuple[object, OptimizerState]:
    """
    Atualização Adam in-place; retorna (modelo, estado).

    Com ``float32_params`` os novos valores são arredondados para a precisão
    float32 em que os parâmetros são guardados no checkpoint.
    """
    for name, p in model.params.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        g = grads.get(name)
        if g is not None and np.shape(g) != p.shape:
            raise ShapeError(f"Gradiente de {name} com shape {np.shape(g)}, esperado {p.shape}")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step

    for name, p in model.params.items():
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else np.asarray(g, dtype=np.float64)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        updated = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if float32_params:
            updated = updated.astype(np.float32).astype(np.float64)
        model.params[name] = updated
    return model, state
