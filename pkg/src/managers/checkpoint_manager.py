"""
Checkpoints binários do modelo.

Layout (little-endian): ``MDF1`` | u32 versão | u32 tamanho do cabeçalho |
cabeçalho JSON (UTF-8) | parâmetros float32 na ordem do cabeçalho | u32 CRC32
de todos os bytes anteriores.
"""
import json
import os
import struct
import zlib
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.denoiser import MLPDenoiser
from ..core.schedule import NoiseSchedule, make_linear_schedule
from ..utils.errors import ArtifactIOError, FormatError
from ..utils.logger import Logger

MAGIC = b"MDF1"
VERSION = 1
PREFIX = struct.Struct("<II")
CRC = struct.Struct("<I")


@dataclass
class Checkpoint:
    model: MLPDenoiser
    schedule: NoiseSchedule
    labels: List[str]
    image_shape: Optional[Tuple[int, ...]] = None
    dataset: Optional[str] = None

    @property
    def is_image_mode(self) -> bool:
        return self.image_shape is not None


def _header(ckpt: Checkpoint) -> Dict[str, Any]:
    return {
        'schedule': ckpt.schedule.to_dict(),
        'labels': list(ckpt.labels),
        'model': ckpt.model.config(),
        'image_shape': list(ckpt.image_shape) if ckpt.image_shape is not None else None,
        'dataset': ckpt.dataset,
        'parameters': [{'name': name, 'shape': list(p.shape)} for name, p in ckpt.model.params.items()],
    }


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = json.dumps(_header(ckpt), sort_keys=True).encode('utf-8')
    payload = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in ckpt.model.params.values())
    body = MAGIC + PREFIX.pack(VERSION, len(header)) + header + payload
    return body + CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def _read_header(data: bytes) -> Tuple[Dict[str, Any], int]:
    minimum = len(MAGIC) + PREFIX.size + CRC.size
    if len(data) < minimum or data[:len(MAGIC)] != MAGIC:
        raise FormatError("Checkpoint inválido: assinatura MDF1 ausente")
    body, stored = data[:-CRC.size], CRC.unpack(data[-CRC.size:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored:
        raise FormatError("Checkpoint corrompido: CRC32 não confere")

    version, header_len = PREFIX.unpack_from(body, len(MAGIC))
    if version != VERSION:
        raise FormatError(f"Versão de checkpoint não suportada: {version}")
    start = len(MAGIC) + PREFIX.size
    if start + header_len > len(body):
        raise FormatError("Checkpoint truncado no cabeçalho")
    try:
        header = json.loads(body[start:start + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"Cabeçalho do checkpoint ilegível: {e}")
    return header, start + header_len


def decode_checkpoint(data: bytes) -> Checkpoint:
    header, offset = _read_header(data)
    body_end = len(data) - CRC.size
    try:
        sched = header['schedule']
        schedule = make_linear_schedule(sched['steps'], sched['beta_start'], sched['beta_end'])
        config = header['model']
        model = MLPDenoiser(input_dim=config['input_dim'], hidden_dims=config['hidden_dims'],
                            embed_dim=config['embed_dim'], num_labels=config['num_labels'],
                            activation=config['activation'])
        specs = header['parameters']
        labels = [str(label) for label in header['labels']]
        image_shape = header.get('image_shape')
    except (KeyError, TypeError) as e:
        raise FormatError(f"Cabeçalho do checkpoint incompleto: {e}")

    if [s['name'] for s in specs] != list(model.params):
        raise FormatError("Parâmetros do checkpoint não correspondem à arquitetura declarada")

    params = {}
    for spec in specs:
        shape = tuple(spec['shape'])
        if shape != model.params[spec['name']].shape:
            raise FormatError(f"Parâmetro {spec['name']} com shape {shape} inesperado")
        count = int(np.prod(shape))
        if offset + 4 * count > body_end:
            raise FormatError("Checkpoint truncado nos parâmetros")
        values = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        params[spec['name']] = values.reshape(shape).astype(np.float64)
        offset += 4 * count
    if offset != body_end:
        raise FormatError(f"Checkpoint com {body_end - offset} bytes sobrando")

    model.params = params
    return Checkpoint(model, schedule, labels, tuple(image_shape) if image_shape else None, header.get('dataset'))


class CheckpointManager:
    def __init__(self, logger: Logger):
        self.logger = logger

    def save(self, path: str, ckpt: Checkpoint):
        """Grava o checkpoint (cria o diretório se necessário)"""
        try:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(path, 'wb') as f:
                f.write(encode_checkpoint(ckpt))
        except OSError as e:
            self.logger.error(f"Erro ao gravar checkpoint: {e}")
            raise ArtifactIOError(f"Erro ao gravar checkpoint {path}: {e}")
        self.logger.success(
            f"Checkpoint salvo em {path} ({ckpt.model.parameter_count()} parâmetros, rótulos {ckpt.labels})"
        )

    def _read(self, path: str) -> bytes:
        try:
            with open(path, 'rb') as f:
                return f.read()
        except FileNotFoundError:
            raise ArtifactIOError(f"Checkpoint {path} não encontrado")
        except OSError as e:
            raise ArtifactIOError(f"Erro ao ler checkpoint {path}: {e}")

    def load(self, path: str) -> Checkpoint:
        try:
            ckpt = decode_checkpoint(self._read(path))
        except Exception as e:
            self.logger.error(f"Erro ao carregar checkpoint {path}: {e}")
            raise
        self.logger.info(f"Checkpoint carregado: {path}")
        return ckpt

    def describe(self, path: str) -> Dict[str, Any]:
        """Metadados do cabeçalho sem reconstruir o modelo"""
        header, _ = _read_header(self._read(path))
        shapes: Sequence[Sequence[int]] = [p['shape'] for p in header.get('parameters', [])]
        return {
            'labels': header.get('labels', []),
            'model': header.get('model', {}),
            'schedule': header.get('schedule', {}),
            'image_shape': header.get('image_shape'),
            'dataset': header.get('dataset'),
            'parameter_count': int(sum(int(np.prod(s)) for s in shapes)),
            'size': os.path.getsize(path),
        }
