"""
Leitura e escrita de imagens PPM binárias (P6, maxval 255).
"""
import os
from typing import List

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ArtifactIOError, FormatError, ShapeError


def read_ppm(path: str) -> np.ndarray:
    """Lê um PPM e retorna array uint8 (altura, largura, 3)"""
    try:
        with Image.open(path) as img:
            if img.format != "PPM":
                raise FormatError(f"{path} não é um arquivo PPM (formato {img.format})")
            return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except FileNotFoundError:
        raise ArtifactIOError(f"Imagem {path} não encontrada")
    except UnidentifiedImageError as e:
        raise FormatError(f"Imagem {path} ilegível: {e}")


def write_ppm(path: str, image: np.ndarray):
    """Grava array uint8 (altura, largura, 3) como PPM P6"""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"Imagem RGB esperada com shape (h, w, 3), recebido {image.shape}")
    if image.dtype != np.uint8:
        raise ShapeError(f"Imagem deve ser uint8, recebido {image.dtype}")

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    try:
        Image.fromarray(np.ascontiguousarray(image)).save(path, format="PPM")
    except OSError as e:
        raise ArtifactIOError(f"Erro ao gravar imagem {path}: {e}")


def list_ppm_files(directory: str) -> List[str]:
    """Lista arquivos .ppm de um diretório em ordem alfabética"""
    if not os.path.isdir(directory):
        raise ArtifactIOError(f"Diretório {directory} não encontrado")
    return sorted(
        os.path.join(directory, name)
        for name in os.listdir(directory)
        if name.lower().endswith(".ppm")
    )
