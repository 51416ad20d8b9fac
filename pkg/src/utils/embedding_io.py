"""
Formato binário de embeddings/probabilidades.

Layout (little-endian): ``F32\\n`` | u32 linhas | u32 colunas |
linhas*colunas float32 em ordem row-major.
"""
import struct

import numpy as np

from .errors import ArtifactIOError, FormatError, ShapeError

MAGIC = b"F32\n"
HEADER = struct.Struct("<II")


def encode_matrix(matrix: np.ndarray) -> bytes:
    """Serializa uma matriz 2-D no formato F32"""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ShapeError(f"Matriz 2-D esperada, recebido shape {matrix.shape}")
    rows, cols = matrix.shape
    payload = np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    return MAGIC + HEADER.pack(rows, cols) + payload


def decode_matrix(data: bytes) -> np.ndarray:
    """Desserializa bytes F32 em matriz float64"""
    if len(data) < len(MAGIC) + HEADER.size or data[:len(MAGIC)] != MAGIC:
        raise FormatError("bad embedding file: cabeçalho inválido")
    rows, cols = HEADER.unpack_from(data, len(MAGIC))
    offset = len(MAGIC) + HEADER.size
    expected = rows * cols * 4
    if len(data) - offset != expected:
        raise FormatError(
            f"bad embedding file: esperados {expected} bytes de dados, encontrados {len(data) - offset}"
        )
    values = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset)
    return values.reshape(rows, cols).astype(np.float64)


def write_matrix(path: str, matrix: np.ndarray):
    """Grava matriz em arquivo F32"""
    try:
        with open(path, "wb") as f:
            f.write(encode_matrix(matrix))
    except OSError as e:
        raise ArtifactIOError(f"Erro ao gravar {path}: {e}")


def read_matrix(path: str) -> np.ndarray:
    """Lê matriz de arquivo F32"""
    try:
        with open(path, "rb") as f:
            return decode_matrix(f.read())
    except FileNotFoundError:
        raise ArtifactIOError(f"Arquivo {path} não encontrado")
