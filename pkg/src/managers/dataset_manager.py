import json
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tabulate import tabulate

from .patch_extractor import (Annotation, ManifestEntry, Patch, TileSpec, extract_tiles, manifest_dir,
                              manifest_label_counts, read_manifest, write_manifest)
from ..core.toy_data import ManifestDataset
from ..utils.errors import ArtifactIOError, FormatError, ValidationError
from ..utils.image_io import read_ppm, write_ppm
from ..utils.logger import Logger

MANIFEST_NAME = "manifest.jsonl"
PATCH_DIR = "patches"


class DatasetManager:
    """Lâminas PPM + anotações JSON → patches PPM + manifesto JSON lines"""

    def __init__(self, logger: Logger, threads: int = 1):
        self.logger = logger
        self.threads = max(1, int(threads))

    def load_annotations(self, path: str) -> List[Annotation]:
        """Aceita um objeto ou uma lista de objetos {slide_id, label, polygons}"""
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ArtifactIOError(f"Arquivo de anotações {path} não encontrado")
        except json.JSONDecodeError as e:
            raise FormatError(f"Erro ao decodificar JSON de {path}: {e}")

        if isinstance(data, dict):
            data = [data]
        if not isinstance(data, list):
            raise FormatError(f"Anotações em {path} devem ser um objeto ou uma lista")
        annotations = [Annotation.from_dict(item) for item in data]
        self.logger.info(f"{len(annotations)} anotações carregadas de {path}")
        return annotations

    def _process(self, slides_dir: str, ann: Annotation, spec: TileSpec,
                 rng: np.random.Generator) -> Tuple[Annotation, List[Patch]]:
        slide_path = os.path.join(slides_dir, f"{ann.slide_id}.ppm")
        try:
            slide = read_ppm(slide_path)
            patches = extract_tiles(slide, ann, spec, rng)
        except Exception as e:
            self.logger.error(f"Erro ao processar lâmina {ann.slide_id}: {e}")
            raise
        self.logger.info(f"Lâmina {ann.slide_id} ({ann.label}): {len(patches)} patches")
        return ann, patches

    def build(self, slides_dir: str, annotations: Sequence[Annotation], out_dir: str, spec: TileSpec,
              seed: int, labels: Optional[Sequence[str]] = None) -> Tuple[str, Dict[str, int]]:
        """
        Recorta todas as lâminas anotadas e grava patches e manifesto em ``out_dir``.

        Cada anotação recebe um gerador filho do ``seed`` na ordem
        (slide_id, label), o que torna o manifesto independente do número de
        threads. Retorna (caminho do manifesto, contagem por rótulo).
        """
        if labels:
            unknown = sorted({a.label for a in annotations} - set(labels))
            if unknown:
                raise ValidationError(f"Rótulos fora do conjunto configurado: {unknown}")

        ordered = sorted(annotations, key=lambda a: (a.slide_id, a.label))
        children = np.random.SeedSequence(seed).spawn(len(ordered))
        patch_dir = os.path.join(out_dir, PATCH_DIR)
        os.makedirs(patch_dir, exist_ok=True)

        self.logger.info(f"Recortando {len(ordered)} lâminas com {self.threads} thread(s)")
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            results = list(pool.map(
                lambda job: self._process(slides_dir, job[0], spec, np.random.default_rng(job[1])),
                zip(ordered, children),
            ))

        entries = []
        try:
            for ann, patches in results:
                for patch in patches:
                    name = f"{ann.slide_id}_{ann.label}_y{patch.y}_x{patch.x}.ppm"
                    write_ppm(os.path.join(patch_dir, name), patch.image)
                    entries.append(ManifestEntry(f"{PATCH_DIR}/{name}", ann.label, ann.slide_id, patch.x, patch.y))
            manifest_path = os.path.join(out_dir, MANIFEST_NAME)
            write_manifest(entries, manifest_path)
        except Exception as e:
            self.logger.error(f"Erro ao gravar conjunto de dados: {e}")
            raise

        counts = manifest_label_counts(entries, labels)
        self.logger.success(f"Manifesto gravado em {manifest_path} com {len(entries)} patches")
        return manifest_path, counts

    def label_table(self, counts: Dict[str, int]) -> str:
        """Tabela por rótulo com linha de total"""
        rows = [[label, count] for label, count in counts.items()]
        rows.append(["Total", sum(counts.values())])
        return tabulate(rows, headers=["Rótulo", "Patches"], tablefmt='grid')

    def load_dataset(self, manifest_path: str, labels: Sequence[str]) -> ManifestDataset:
        """Carrega os patches de um manifesto como conjunto de treino"""
        entries = read_manifest(manifest_path)
        if not entries:
            raise ValidationError(f"Manifesto {manifest_path} sem entradas")
        base = manifest_dir(manifest_path)
        images = [read_ppm(os.path.join(base, e.path)) for e in entries]
        dataset = ManifestDataset(images, [e.label for e in entries], labels)
        self.logger.info(f"{len(dataset)} patches carregados de {manifest_path}, shape {dataset.image_shape}")
        return dataset
