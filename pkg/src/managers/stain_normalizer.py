"""
Normalização de cor que preserva a estrutura (H&E).

RGB → densidade óptica (Beer-Lambert), fatoração esparsa não negativa em base
de 2 corantes W (3×2, colunas unitárias) e concentrações H (2×N), e
transferência para a base de um alvo mantendo as concentrações da origem.
"""
import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from sklearn.decomposition import NMF

from ..utils.errors import ArtifactIOError, DegenerateInputError, FormatError, ShapeError, ValidationError
from ..utils.logger import Logger

BACKGROUND_THRESHOLD = 0.15
DEFAULT_LAMBDA = 0.1
DEFAULT_ITERS = 200
ANGLE_PERCENTILE = 1.0
COLLAPSE_COSINE = 0.99
BLUE = 2


@dataclass
class StainModel:
    """Base de corantes W (3×2) e percentil 99 das concentrações por corante"""
    W: np.ndarray
    c99: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.c99 = np.asarray(self.c99, dtype=np.float64).reshape(-1)
        if self.W.shape != (3, 2):
            raise ShapeError(f"W deve ser 3x2, recebido {self.W.shape}")
        if self.c99.shape != (2,):
            raise ShapeError(f"c99 deve ter 2 valores, recebido {self.c99.shape}")
        if np.any(self.W < 0) or not np.all(np.isfinite(self.W)):
            raise ValidationError("W deve ser não negativa e finita")
        norms = np.linalg.norm(self.W, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValidationError(f"Colunas de W devem ter norma unitária, normas {norms.tolist()}")
        if np.any(self.c99 < 0) or not np.all(np.isfinite(self.c99)):
            raise ValidationError("c99 deve ser não negativo e finito")

    def to_dict(self) -> Dict[str, List[float]]:
        return {'W': [float(v) for v in self.W.reshape(-1)], 'c99': [float(v) for v in self.c99]}

    @classmethod
    def from_dict(cls, data: Dict) -> "StainModel":
        try:
            W = np.asarray(data['W'], dtype=np.float64)
            c99 = np.asarray(data['c99'], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"Modelo de corantes inválido: {e}")
        if W.size != 6:
            raise FormatError(f"W deve ter 6 valores, recebido {W.size}")
        return cls(W.reshape(3, 2), c99)


def rgb_to_od(img: np.ndarray, I0: float = 255.0) -> np.ndarray:
    """OD = -log((pixel + 1)/(I0 + 1)) por canal; retorna matriz 3 × Npixels"""
    if I0 <= 0:
        raise ValidationError(f"I0 deve ser > 0, recebido {I0}")
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"Imagem RGB esperada com shape (h, w, 3), recebido {img.shape}")
    pixels = img.reshape(-1, 3).astype(np.float64).T
    od = -np.log((pixels + 1.0) / (I0 + 1.0))
    return np.maximum(od, 0.0)


def od_to_rgb(od: np.ndarray, shape: Tuple[int, int, int], I0: float = 255.0) -> np.ndarray:
    """Inversa de rgb_to_od com arredondamento e saturação em [0, 255]"""
    pixels = (I0 + 1.0) * np.exp(-np.asarray(od, dtype=np.float64)) - 1.0
    pixels = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)
    return pixels.T.reshape(tuple(shape))


def foreground_mask(od: np.ndarray, threshold: float = BACKGROUND_THRESHOLD) -> np.ndarray:
    """Pixels cuja norma L1 da OD excede o limiar"""
    return np.abs(od).sum(axis=0) > threshold


def solve_concentrations(W: np.ndarray, od: np.ndarray, lambda_sparse: float = 0.0) -> np.ndarray:
    """
    Minimiza ‖od - W·h‖² + λ·‖h‖₁ com h >= 0, exatamente, pixel a pixel.

    Com dois corantes o ótimo está numa das faces {h=0}, {h₂=0}, {h₁=0} ou no
    interior; avalia o minimizador de cada face viável e fica com o menor.
    """
    od = np.asarray(od, dtype=np.float64)
    gram = W.T @ W
    c = W.T @ od
    half = 0.5 * lambda_sparse
    n = od.shape[1]

    candidates = [np.zeros((2, n))]
    for j in range(2):
        h = np.zeros((2, n))
        if gram[j, j] > 0:
            h[j] = np.maximum(0.0, (c[j] - half) / gram[j, j])
        candidates.append(h)
    det = gram[0, 0] * gram[1, 1] - gram[0, 1] ** 2
    if det > 1e-12 * max(1.0, gram[0, 0] * gram[1, 1]):
        both = np.linalg.solve(gram, c - half)
        candidates.append(both)

    best = None
    best_value = None
    for h in candidates:
        value = -2.0 * np.sum(c * h, axis=0) + np.sum(h * (gram @ h), axis=0) + lambda_sparse * h.sum(axis=0)
        value = np.where(np.all(h >= 0, axis=0), value, np.inf)
        if best is None:
            best, best_value = h.copy(), value
        else:
            better = value < best_value
            best[:, better] = h[:, better]
            best_value = np.where(better, value, best_value)
    return best


def stain_objective(od: np.ndarray, W: np.ndarray, H: np.ndarray, lambda_sparse: float) -> float:
    """‖OD - W·H‖²_F + λ·‖H‖₁"""
    return float(np.sum((od - W @ H) ** 2) + lambda_sparse * np.abs(H).sum())


def _normalize_columns(W: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    W = np.maximum(W, 0.0)
    for j in range(W.shape[1]):
        norm = np.linalg.norm(W[:, j])
        if norm <= 0:
            W[:, j] = rng.uniform(0.1, 1.0, size=W.shape[0])
            norm = np.linalg.norm(W[:, j])
        W[:, j] /= norm
    return W


def _angle_basis(X: np.ndarray, alpha: float = ANGLE_PERCENTILE) -> Optional[np.ndarray]:
    """
    Base inicial pelos ângulos extremos da OD no plano dominante: projeta os
    pixels nos dois autovetores principais do segundo momento X·Xᵀ e toma os
    percentis ``alpha`` e ``100 - alpha`` do ângulo. None se a base degenerar.
    """
    _, ev = np.linalg.eigh(X @ X.T / X.shape[1])
    ev = ev[:, [2, 1]]
    if ev[:, 0].sum() < 0:
        ev[:, 0] *= -1
    projection = ev.T @ X
    phi = np.arctan2(projection[1], projection[0])
    min_phi, max_phi = np.percentile(phi, (alpha, 100 - alpha))
    W = ev @ np.array([[np.cos(min_phi), np.cos(max_phi)], [np.sin(min_phi), np.sin(max_phi)]])
    W = np.maximum(W, 0.0)
    norms = np.linalg.norm(W, axis=0)
    if np.any(norms <= 0):
        return None
    return W / norms


def _update_basis_column(residual: np.ndarray, W: np.ndarray, h: np.ndarray) -> np.ndarray:
    """
    Minimizador exato de ‖R - w·h‖² com w >= 0 e ‖w‖ = 1: w ∝ max(R·hᵀ, 0).
    Se nenhum componente é positivo, o melhor é o eixo de maior valor.
    """
    if not np.any(h > 0):
        return W
    c = residual @ h
    positive = np.maximum(c, 0.0)
    norm = np.linalg.norm(positive)
    if norm > 0:
        return positive / norm
    axis = np.zeros_like(c)
    axis[int(np.argmax(c))] = 1.0
    return axis


def _rank_one_fit(X: np.ndarray, w: np.ndarray, lambda_sparse: float, iters: int) -> Tuple[np.ndarray, np.ndarray]:
    """Alterna w (norma unitária) e h = max(0, wᵀX - λ/2) para um único corante"""
    half = 0.5 * lambda_sparse
    h = np.maximum(0.0, w @ X - half)
    for _ in range(max(1, int(iters))):
        if not np.any(h > 0):
            break
        w = _update_basis_column(X, w, h)
        h_next = np.maximum(0.0, w @ X - half)
        if np.allclose(h_next, h, rtol=0.0, atol=1e-12):
            h = h_next
            break
        h = h_next
    return w, h


def _prune_redundant_stain(X: np.ndarray, W: np.ndarray, H: np.ndarray, lambda_sparse: float, iters: int,
                           current: float) -> Tuple[np.ndarray, np.ndarray, float, bool]:
    """
    Testa explicar a OD com um único corante. Colunas quase paralelas
    (cosseno > COLLAPSE_COSINE) sempre colapsam; fora isso, o colapso só é
    aceito se o objetivo não aumentar. A coluna descartada fica com linha de H zerada.
    """
    combined = np.maximum((W @ H).sum(axis=1), 0.0)
    norm = np.linalg.norm(combined)
    if norm <= 0:
        return W, H, current, False
    w, h = _rank_one_fit(X, combined / norm, lambda_sparse, iters)

    keep = int(np.argmax(H.sum(axis=1)))
    W_single = W.copy()
    W_single[:, keep] = w
    H_single = np.zeros_like(H)
    H_single[keep] = h
    value = stain_objective(X, W_single, H_single, lambda_sparse)

    parallel = float(W[:, 0] @ W[:, 1]) > COLLAPSE_COSINE
    if parallel or value <= current:
        return W_single, H_single, value, True
    return W, H, current, False


def fit_stains(od: np.ndarray, lambda_sparse: float = DEFAULT_LAMBDA, iters: int = DEFAULT_ITERS,
               rng: Optional[np.random.Generator] = None, threshold: float = BACKGROUND_THRESHOLD,
               history: Optional[List[float]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Fatoração esparsa não negativa OD ≈ W·H.

    Partida a quente: NMF multiplicativa semeada ou a base dos ângulos
    extremos, a de menor objetivo. Depois alterna a atualização exata de cada
    coluna de W (norma unitária) e a solução exata de H, de modo que o
    objetivo nunca aumenta. Ao final, se um único corante explica a OD
    tão bem quanto dois, o corante ativo fica primeiro e a segunda linha
    de H é zerada. Com dois corantes ativos, a coluna de maior OD no canal
    azul (hematoxilina) fica primeiro. Retorna H para todos os pixels, com
    zeros no fundo. Se ``history`` for uma lista, recebe o objetivo a cada
    iteração.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    od = np.asarray(od, dtype=np.float64)
    if od.ndim != 2 or od.shape[0] != 3:
        raise ShapeError(f"OD deve ser 3 x N, recebido {od.shape}")
    if lambda_sparse < 0:
        raise ValidationError(f"lambda_sparse deve ser >= 0, recebido {lambda_sparse}")

    mask = foreground_mask(od, threshold)
    X = od[:, mask]
    if X.shape[1] < 2:
        raise DegenerateInputError(
            f"Imagem só com fundo: {X.shape[1]} pixel(s) acima do limiar {threshold} de OD"
        )

    seed = int(rng.integers(0, 2 ** 31 - 1))
    warm = NMF(n_components=2, init='random', solver='mu', max_iter=200, random_state=seed)
    warm.fit(X.T)
    W = _normalize_columns(np.array(warm.components_.T, dtype=np.float64), rng)
    H = solve_concentrations(W, X, lambda_sparse)
    previous = stain_objective(X, W, H, lambda_sparse)

    angle_W = _angle_basis(X)
    if angle_W is not None:
        angle_H = solve_concentrations(angle_W, X, lambda_sparse)
        angle_value = stain_objective(X, angle_W, angle_H, lambda_sparse)
        if angle_value < previous:
            W, H, previous = angle_W, angle_H, angle_value

    if history is not None:
        history.append(previous)

    current = previous
    for _ in range(int(iters)):
        for j in range(2):
            residual = X - W @ H + np.outer(W[:, j], H[j])
            W[:, j] = _update_basis_column(residual, W[:, j], H[j])
        H = solve_concentrations(W, X, lambda_sparse)

        current = stain_objective(X, W, H, lambda_sparse)
        if history is not None:
            history.append(current)
        if previous - current <= 1e-12 * max(previous, 1e-300):
            break
        previous = current

    W, H, pruned, single = _prune_redundant_stain(X, W, H, lambda_sparse, iters, current)
    if history is not None and single:
        history.append(pruned)

    if single:
        swap = not np.any(H[0] > 0)
    else:
        swap = W[BLUE, 0] < W[BLUE, 1]
    if swap:
        W = W[:, ::-1].copy()
        H = H[::-1].copy()

    full = np.zeros((2, od.shape[1]))
    full[:, mask] = H
    return W, full


def normalize_to_target(src: np.ndarray, src_model: StainModel, tgt_model: StainModel,
                        lambda_sparse: float = 0.0, threshold: float = BACKGROUND_THRESHOLD,
                        I0: float = 255.0) -> np.ndarray:
    """
    Transfere ``src`` para a base de ``tgt_model``.

    Concentrações da origem contra W_src, reescaladas por c99_tgt/c99_src e
    reconstruídas com W_tgt; o resíduo fora do espaço dos corantes é mantido
    e o fundo passa inalterado.
    """
    if np.any(src_model.c99 <= 0):
        raise DegenerateInputError(f"c99 da origem contém zero: {src_model.c99.tolist()}")
    src = np.asarray(src)
    od = rgb_to_od(src, I0)
    mask = foreground_mask(od, threshold)

    X = od[:, mask]
    H = solve_concentrations(src_model.W, X, lambda_sparse)
    residual = X - src_model.W @ H
    scale = (tgt_model.c99 / src_model.c99)[:, None]

    out_od = od.copy()
    out_od[:, mask] = tgt_model.W @ (H * scale) + residual
    out = od_to_rgb(out_od, src.shape, I0)

    flat_out = out.reshape(-1, 3)
    flat_out[~mask] = src.reshape(-1, 3)[~mask]
    return out


class StainNormalizer:
    """Ajuste de modelos de corante e normalização de imagens para um alvo"""

    def __init__(self, logger: Logger, lambda_sparse: float = DEFAULT_LAMBDA, iters: int = DEFAULT_ITERS,
                 threshold: float = BACKGROUND_THRESHOLD, seed: int = 0):
        self.logger = logger
        self.lambda_sparse = lambda_sparse
        self.iters = iters
        self.threshold = threshold
        self.seed = seed

    def fit(self, image: np.ndarray, rng: Optional[np.random.Generator] = None) -> StainModel:
        """Ajusta W e c99 de uma imagem"""
        if rng is None:
            rng = np.random.default_rng(self.seed)
        od = rgb_to_od(image)
        W, H = fit_stains(od, self.lambda_sparse, self.iters, rng, self.threshold)
        mask = foreground_mask(od, self.threshold)
        c99 = np.percentile(H[:, mask], 99, axis=1)
        self.logger.debug(f"Base de corantes ajustada: W={np.round(W, 4).tolist()}, c99={np.round(c99, 4).tolist()}")
        return StainModel(W, c99)

    def transform(self, image: np.ndarray, src_model: StainModel, tgt_model: StainModel) -> np.ndarray:
        return normalize_to_target(image, src_model, tgt_model, threshold=self.threshold)

    def normalize(self, image: np.ndarray, tgt_model: StainModel,
                  rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Ajusta o modelo da própria imagem e transfere para o alvo"""
        src_model = self.fit(image, rng)
        return self.transform(image, src_model, tgt_model)

    def save_model(self, model: StainModel, path: str):
        try:
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(model.to_dict(), f, indent=2)
        except OSError as e:
            self.logger.error(f"Erro ao salvar modelo de corantes: {e}")
            raise ArtifactIOError(f"Erro ao salvar {path}: {e}")
        self.logger.success(f"Modelo de corantes salvo em {path}")

    def load_model(self, path: str) -> StainModel:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return StainModel.from_dict(json.load(f))
        except FileNotFoundError:
            raise ArtifactIOError(f"Modelo de corantes {path} não encontrado")
        except json.JSONDecodeError as e:
            raise FormatError(f"Erro ao decodificar JSON de {path}: {e}")
