"""
Fontes de dados para treino: tarefa sintética de duas gaussianas e conjunto de
patches descrito por um manifesto.
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .diffusion import Sample
from ..utils.errors import ParameterError, ValidationError

TOY_TASKS = ("two-gaussians",)


class ToyTwoGaussians:
    """
    Mistura condicional 2-D: rótulo 0 → N((-3, 0), 0.25·I), rótulo 1 → N((+3, 0), 0.25·I).
    Cada lote é sorteado de novo (dados ilimitados).
    """

    name = "two-gaussians"
    labels = ["left", "right"]
    means = np.array([[-3.0, 0.0], [3.0, 0.0]])
    variance = 0.25
    input_dim = 2
    image_shape = None

    def draw(self, batch_size: int, rng: np.random.Generator) -> List[Sample]:
        if batch_size < 1:
            raise ParameterError(f"batch deve ser >= 1, recebido {batch_size}")
        labels = rng.integers(0, 2, size=batch_size)
        points = self.means[labels] + np.sqrt(self.variance) * rng.standard_normal((batch_size, 2))
        return [Sample(point, int(label)) for point, label in zip(points, labels)]

    def nearest_mean(self, points: np.ndarray) -> np.ndarray:
        """Índice da média da mistura mais próxima de cada ponto"""
        points = np.atleast_2d(points)
        dists = np.linalg.norm(points[:, None, :] - self.means[None, :, :], axis=2)
        return np.argmin(dists, axis=1)


def image_to_vector(image: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] → vetor em [-1, 1]"""
    return np.asarray(image, dtype=np.float64).reshape(-1) / 127.5 - 1.0


def vector_to_image(vector: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Vetor em [-1, 1] → imagem uint8 (arredondada e saturada)"""
    pixels = np.rint((np.asarray(vector, dtype=np.float64) + 1.0) * 127.5)
    return np.clip(pixels, 0, 255).astype(np.uint8).reshape(tuple(shape))


class ManifestDataset:
    """Patches RGB carregados em memória, com rótulos mapeados para índices"""

    def __init__(self, images: List[np.ndarray], label_names: List[str], labels: Sequence[str]):
        if not images:
            raise ValidationError("Conjunto de patches vazio")
        shapes = {img.shape for img in images}
        if len(shapes) != 1:
            raise ValidationError(f"Patches com tamanhos diferentes: {sorted(shapes)}")

        self.labels = list(labels)
        index = {name: i for i, name in enumerate(self.labels)}
        unknown = sorted(set(label_names) - set(index))
        if unknown:
            raise ValidationError(f"Rótulos fora do conjunto configurado: {unknown}")

        self.image_shape: Tuple[int, ...] = tuple(images[0].shape)
        self.data = np.stack([image_to_vector(img) for img in images])
        self.targets = np.array([index[name] for name in label_names], dtype=np.int64)
        self.input_dim = int(self.data.shape[1])
        self.name = "manifest"

    def __len__(self):
        return int(self.data.shape[0])

    def draw(self, batch_size: int, rng: np.random.Generator) -> List[Sample]:
        if batch_size < 1:
            raise ParameterError(f"batch deve ser >= 1, recebido {batch_size}")
        idx = rng.integers(0, len(self), size=batch_size)
        return [Sample(self.data[i], int(self.targets[i])) for i in idx]


def make_toy_task(name: str) -> Optional[ToyTwoGaussians]:
    if name == "two-gaussians":
        return ToyTwoGaussians()
    raise ParameterError(f"Tarefa sintética desconhecida: {name} (disponíveis: {', '.join(TOY_TASKS)})")
