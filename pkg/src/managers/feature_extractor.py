"""
Extratores determinísticos de features para as métricas (sem rede pré-treinada).
"""
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .metrics_analyzer import FeatureSet
from ..utils.errors import ParameterError, ShapeError

EXTRACTORS = ("identity", "random_projection", "histogram")
HIST_BINS = 16


@dataclass(frozen=True)
class Extractor:
    kind: str = "identity"
    seed: int = 0
    dim: int = 64

    def __post_init__(self):
        if self.kind not in EXTRACTORS:
            raise ParameterError(f"Extrator desconhecido: {self.kind} (disponíveis: {', '.join(EXTRACTORS)})")
        if self.kind == "random_projection" and self.dim < 1:
            raise ParameterError(f"Dimensão da projeção deve ser >= 1, recebido {self.dim}")


def _as_batch(images: Sequence[np.ndarray]) -> np.ndarray:
    if len(images) == 0:
        raise ParameterError("Nenhuma imagem para extrair features")
    shapes = {np.shape(img) for img in images}
    if len(shapes) != 1:
        raise ShapeError(f"Imagens com tamanhos diferentes: {sorted(shapes)}")
    batch = np.stack([np.asarray(img, dtype=np.float64) for img in images])
    if batch.ndim != 4 or batch.shape[3] != 3:
        raise ShapeError(f"Imagens RGB esperadas com shape (h, w, 3), recebido {batch.shape[1:]}")
    return batch


def projection_matrix(input_dim: int, dim: int, seed: int) -> np.ndarray:
    """Matriz gaussiana fixa por seed, escalada por 1/√D"""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((input_dim, dim)) / np.sqrt(input_dim)


def _histogram_features(batch: np.ndarray) -> np.ndarray:
    n = batch.shape[0]
    pixels = batch.shape[1] * batch.shape[2]
    edges = np.linspace(0.0, 256.0, HIST_BINS + 1)
    feats = np.empty((n, 3 * HIST_BINS + 1))
    for i in range(n):
        for ch in range(3):
            counts, _ = np.histogram(batch[i, :, :, ch], bins=edges)
            feats[i, ch * HIST_BINS:(ch + 1) * HIST_BINS] = counts / pixels
        gray = batch[i].mean(axis=2) / 255.0
        gy, gx = np.gradient(gray) if min(gray.shape) > 1 else (np.zeros_like(gray), np.zeros_like(gray))
        feats[i, -1] = float(np.mean(np.hypot(gx, gy)))
    return feats


def extract_features(images: Sequence[np.ndarray], extractor: Extractor, space_name: str = "final") -> FeatureSet:
    """
    identity: pixels achatados / 255; random_projection: identity × matriz
    gaussiana semeada; histogram: histogramas normalizados de 16 bins por canal
    seguidos da magnitude média do gradiente.
    """
    batch = _as_batch(images)
    flat = batch.reshape(batch.shape[0], -1) / 255.0
    if extractor.kind == "identity":
        feats = flat
    elif extractor.kind == "random_projection":
        feats = flat @ projection_matrix(flat.shape[1], extractor.dim, extractor.seed)
    else:
        feats = _histogram_features(batch)
    return FeatureSet(feats, space_name)


def extract_spatial_features(images: Sequence[np.ndarray], grid: int = 4) -> FeatureSet:
    """Médias por canal numa grade grid×grid (espaço 'spatial' para o sFID)"""
    batch = _as_batch(images)
    n, h, w, _ = batch.shape
    if grid < 1 or h < grid or w < grid:
        raise ParameterError(f"Grade {grid} inválida para imagens {h}x{w}")
    ys = np.linspace(0, h, grid + 1).astype(int)
    xs = np.linspace(0, w, grid + 1).astype(int)
    cells: List[np.ndarray] = []
    for i in range(grid):
        for j in range(grid):
            cells.append(batch[:, ys[i]:ys[i + 1], xs[j]:xs[j + 1], :].mean(axis=(1, 2)) / 255.0)
    return FeatureSet(np.concatenate(cells, axis=1), "spatial")
