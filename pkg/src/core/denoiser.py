"""
Rede de referência ε_θ(x, t, g).

MLP totalmente conectada com embedding senoidal do passo e tabela de
embedding de genótipo. A entrada da primeira camada é concat(x, emb(t), E[g]),
equivalente a somar as três projeções (injeção aditiva do rótulo junto ao
passo na primeira camada oculta). Forward e backward são puros.
"""
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from ..utils.errors import ParameterError, ShapeError

ACTIVATIONS = ("silu", "tanh", "identity")


def time_embedding(t, E: int) -> np.ndarray:
    """
    Embedding senoidal intercalado: emb[2i] = sin(t·ω_i), emb[2i+1] = cos(t·ω_i),
    ω_i = 10000^(-2i/E). Aceita t escalar (retorna (E,)) ou vetor (retorna (N, E)).
    t = 0 é permitido.
    """
    if isinstance(E, bool) or int(E) != E or E < 2 or E % 2 != 0:
        raise ParameterError(f"Dimensão do embedding deve ser par e >= 2, recebido {E!r}")
    E = int(E)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ParameterError("Passo t deve ser >= 0")

    omega = 10000.0 ** (-2.0 * np.arange(E // 2) / E)
    angles = t_arr.reshape(-1, 1) * omega
    emb = np.empty((angles.shape[0], E))
    emb[:, 0::2] = np.sin(angles)
    emb[:, 1::2] = np.cos(angles)
    if t_arr.ndim == 0:
        return emb[0]
    return emb


def _to_float32_grid(values: np.ndarray) -> np.ndarray:
    """Arredonda para precisão float32 mantendo aritmética em float64"""
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "silu":
        return z * expit(z)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "silu":
        sig = expit(z)
        return sig * (1.0 + z * (1.0 - sig))
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return np.ones_like(z)


class MLPDenoiser:
    """
    ε_θ(x, t, g) de referência.

    Parâmetros (dict ordenado): ``layerN.weight`` (fan_in, fan_out),
    ``layerN.bias`` e ``label_embedding`` (G, E). Inicialização uniforme em
    ±1/√fan_in para camadas e N(0, 1) para a tabela de rótulos, tudo a partir
    de um único ``seed``; valores guardados com precisão float32.
    """

    def __init__(self, input_dim: int = 2, hidden_dims: Sequence[int] = (128, 128), embed_dim: int = 32,
                 num_labels: int = 2, activation: str = "silu", seed: int = 0):
        if input_dim < 1:
            raise ParameterError(f"input_dim deve ser >= 1, recebido {input_dim}")
        if num_labels < 1:
            raise ParameterError(f"num_labels deve ser >= 1, recebido {num_labels}")
        if embed_dim < 2 or embed_dim % 2 != 0:
            raise ParameterError(f"embed_dim deve ser par e >= 2, recebido {embed_dim}")
        if any(h < 1 for h in hidden_dims):
            raise ParameterError(f"hidden_dims inválido: {list(hidden_dims)}")
        if activation not in ACTIVATIONS:
            raise ParameterError(f"Ativação desconhecida: {activation}")

        self.input_dim = int(input_dim)
        self.hidden_dims = [int(h) for h in hidden_dims]
        self.embed_dim = int(embed_dim)
        self.num_labels = int(num_labels)
        self.activation = activation
        self.seed = int(seed)
        self.params: Dict[str, np.ndarray] = self._init_params(np.random.default_rng(self.seed))

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_dim + 2 * self.embed_dim] + self.hidden_dims + [self.input_dim]

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def _init_params(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        params = {}
        sizes = self.layer_sizes
        for i in range(self.num_layers):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            bound = 1.0 / np.sqrt(fan_in)
            params[f"layer{i}.weight"] = _to_float32_grid(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            params[f"layer{i}.bias"] = _to_float32_grid(rng.uniform(-bound, bound, size=fan_out))
        params["label_embedding"] = _to_float32_grid(rng.standard_normal((self.num_labels, self.embed_dim)))
        return params

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def config(self) -> Dict:
        """Dimensões do modelo (checkpoint)"""
        return {
            'input_dim': self.input_dim,
            'hidden_dims': list(self.hidden_dims),
            'embed_dim': self.embed_dim,
            'num_labels': self.num_labels,
            'activation': self.activation,
        }

    def _prepare(self, x, t, g) -> Tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x.reshape(1, -1)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"x com shape {x.shape}, esperado (N, {self.input_dim})")
        n = x.shape[0]

        t = np.broadcast_to(np.asarray(t), (n,))
        g = np.asarray(g)
        if g.dtype.kind not in "iu":
            if not np.all(np.equal(np.mod(g, 1), 0)):
                raise ParameterError("Rótulos devem ser inteiros")
            g = g.astype(np.int64)
        g = np.broadcast_to(g, (n,))
        if np.any(g < 0) or np.any(g >= self.num_labels):
            raise ParameterError(f"Rótulo fora do intervalo 0..{self.num_labels - 1}")
        return x, t, g, single

    def _forward(self, x: np.ndarray, t: np.ndarray, g: np.ndarray):
        h = np.concatenate([x, time_embedding(t, self.embed_dim), self.params["label_embedding"][g]], axis=1)
        inputs, pre = [h], []
        last = self.num_layers - 1
        for i in range(self.num_layers):
            z = h @ self.params[f"layer{i}.weight"] + self.params[f"layer{i}.bias"]
            if i < last:
                pre.append(z)
                h = _activate(z, self.activation)
                inputs.append(h)
            else:
                h = z
        return h, inputs, pre

    def predict_eps(self, x, t, g) -> np.ndarray:
        """Forward determinístico; x (D,) ou (N, D)"""
        x, t, g, single = self._prepare(x, t, g)
        out, _, _ = self._forward(x, t, g)
        return out[0] if single else out

    def backward(self, x, t, g, upstream_grad) -> Dict[str, np.ndarray]:
        """Gradientes exatos de <upstream_grad, predict_eps(x, t, g)> em relação a todos os parâmetros"""
        x, t, g, single = self._prepare(x, t, g)
        up = np.asarray(upstream_grad, dtype=np.float64)
        if single:
            up = up.reshape(1, -1)
        if up.shape != x.shape:
            raise ShapeError(f"upstream_grad com shape {up.shape}, esperado {x.shape}")

        _, inputs, pre = self._forward(x, t, g)
        grads: Dict[str, np.ndarray] = {}
        delta = up
        for i in range(self.num_layers - 1, -1, -1):
            grads[f"layer{i}.weight"] = inputs[i].T @ delta
            grads[f"layer{i}.bias"] = delta.sum(axis=0)
            delta = delta @ self.params[f"layer{i}.weight"].T
            if i > 0:
                delta = delta * _activate_grad(pre[i - 1], self.activation)

        # delta agora é o gradiente da entrada concatenada
        emb_grad = np.zeros_like(self.params["label_embedding"])
        start = self.input_dim + self.embed_dim
        np.add.at(emb_grad, g, delta[:, start:])
        grads["label_embedding"] = emb_grad
        return {name: grads[name] for name in self.params}


def predict_eps(model: MLPDenoiser, x, t, g) -> np.ndarray:
    return model.predict_eps(x, t, g)


def backward(model: MLPDenoiser, x, t, g, upstream_grad) -> Dict[str, np.ndarray]:
    return model.backward(x, t, g, upstream_grad)


def build_denoiser(input_dim: int, num_labels: int, hidden_dims: Optional[Sequence[int]] = None,
                   embed_dim: int = 32, activation: str = "silu", seed: int = 0) -> MLPDenoiser:
    """Cria a rede de referência com os padrões documentados"""
    if hidden_dims is None:
        hidden_dims = (128, 128)
    return MLPDenoiser(input_dim=input_dim, hidden_dims=hidden_dims, embed_dim=embed_dim,
                       num_labels=num_labels, activation=activation, seed=seed)
