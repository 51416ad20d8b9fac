"""
Recorte de patches guiado por anotações poligonais.

A grade começa em (0, 0) com passo ``stride``; um patch é aceito quando a
fração dos seus pixels (centro em x+0.5, y+0.5) dentro de algum polígono atinge
``coverage_threshold``. Pontos na borda contam como dentro.
"""
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..utils.errors import ArtifactIOError, FormatError, ParameterError, ValidationError

GENOTYPES = ("IDHC", "IDHNC", "IDHWT")
_EDGE_TOL = 1e-9


def _as_polygon(poly) -> np.ndarray:
    arr = np.asarray(poly, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ParameterError(f"Polígono deve ser uma lista de vértices (x, y), recebido shape {arr.shape}")
    if arr.shape[0] >= 2 and np.array_equal(arr[0], arr[-1]):
        arr = arr[:-1]
    if arr.shape[0] < 3:
        raise ParameterError(f"Polígono degenerado: {arr.shape[0]} vértice(s), mínimo 3")
    return arr


@dataclass
class Annotation:
    slide_id: str
    label: str
    polygons: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.slide_id:
            raise ValidationError("slide_id vazio na anotação")
        if not self.label:
            raise ValidationError(f"Anotação de {self.slide_id} sem rótulo")
        self.polygons = [_as_polygon(p) for p in self.polygons]

    def check_bounds(self, width: int, height: int):
        for poly in self.polygons:
            if (np.any(poly[:, 0] < 0) or np.any(poly[:, 0] > width)
                    or np.any(poly[:, 1] < 0) or np.any(poly[:, 1] > height)):
                raise ValidationError(
                    f"Polígono de {self.slide_id} fora dos limites da lâmina {width}x{height}"
                )

    @classmethod
    def from_dict(cls, data: Dict) -> "Annotation":
        try:
            return cls(str(data['slide_id']), str(data['label']), list(data['polygons']))
        except (KeyError, TypeError) as e:
            raise FormatError(f"Anotação inválida: {e}")


@dataclass(frozen=True)
class TileSpec:
    patch_size: int = 512
    stride: int = 512
    resize_to: int = 128
    max_per_slide: int = 100
    coverage_threshold: float = 1.0

    def __post_init__(self):
        if self.patch_size < 1 or self.resize_to < 1:
            raise ParameterError("patch_size e resize_to devem ser >= 1")
        if self.patch_size < self.resize_to:
            raise ParameterError(f"patch_size ({self.patch_size}) menor que resize_to ({self.resize_to})")
        if self.patch_size % self.resize_to != 0:
            raise ParameterError(
                f"patch_size ({self.patch_size}) não é divisível por resize_to ({self.resize_to})"
            )
        if self.stride < 1:
            raise ParameterError(f"stride deve ser >= 1, recebido {self.stride}")
        if self.max_per_slide < 1:
            raise ParameterError(f"max_per_slide deve ser >= 1, recebido {self.max_per_slide}")
        if not 0 < self.coverage_threshold <= 1:
            raise ParameterError(f"coverage_threshold deve estar em (0, 1], recebido {self.coverage_threshold}")


class Patch(NamedTuple):
    image: np.ndarray
    label: str
    x: int
    y: int


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    slide_id: str
    x: int
    y: int

    def sort_key(self) -> Tuple[str, int, int]:
        return (self.slide_id, self.y, self.x)


def points_in_polygon(points, poly) -> np.ndarray:
    """Pertinência par-ímpar (ray casting) vetorizada; bordas contam como dentro"""
    poly = _as_polygon(poly)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    px, py = pts[:, 0:1], pts[:, 1:2]

    a = poly
    b = np.roll(poly, -1, axis=0)
    x1, y1 = a[:, 0][None, :], a[:, 1][None, :]
    x2, y2 = b[:, 0][None, :], b[:, 1][None, :]

    straddles = (y1 > py) != (y2 > py)
    with np.errstate(divide='ignore', invalid='ignore'):
        x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
    crossings = np.sum(straddles & (px < x_cross), axis=1)
    inside = (crossings % 2) == 1

    ex, ey = x2 - x1, y2 - y1
    length = np.hypot(ex, ey)
    cross = ex * (py - y1) - ey * (px - x1)
    dot = (px - x1) * ex + (py - y1) * ey
    tol = _EDGE_TOL * length
    on_edge = (length > 0) & (np.abs(cross) <= tol) & (dot >= -tol) & (dot <= length ** 2 + tol)
    on_vertex = np.all(np.abs(pts[:, None, :] - poly[None, :, :]) <= _EDGE_TOL, axis=2)
    return inside | np.any(on_edge, axis=1) | np.any(on_vertex, axis=1)


def point_in_polygon(p, poly) -> bool:
    return bool(points_in_polygon(np.asarray(p, dtype=np.float64).reshape(1, 2), poly)[0])


def _row_intervals(poly: np.ndarray, yc: float) -> List[Tuple[float, float]]:
    """Intervalos fechados de x dentro do polígono na linha horizontal y = yc"""
    a = poly
    b = np.roll(poly, -1, axis=0)
    y1, y2 = a[:, 1], b[:, 1]
    straddles = (y1 > yc) != (y2 > yc)
    xs = a[straddles, 0] + (yc - y1[straddles]) * (b[straddles, 0] - a[straddles, 0]) / (y2[straddles] - y1[straddles])
    xs = np.sort(xs)
    intervals = list(zip(xs[0::2], xs[1::2]))

    flat = (y1 == yc) & (y2 == yc)
    for x_a, x_b in zip(a[flat, 0], b[flat, 0]):
        intervals.append((min(x_a, x_b), max(x_a, x_b)))
    for vx in poly[poly[:, 1] == yc, 0]:
        intervals.append((vx, vx))
    return intervals


def coverage_counts(polygons: Sequence[np.ndarray], width: int, rows: int, xs: np.ndarray) -> np.ndarray:
    """
    Contagem acumulada de pixels internos: ``out[y, j]`` = pixels com centro
    dentro de algum polígono nas linhas < y e colunas < xs[j].
    """
    xs = np.asarray(xs, dtype=np.int64)
    out = np.zeros((rows + 1, xs.size), dtype=np.int64)
    for y in range(rows):
        yc = y + 0.5
        lo, hi = [], []
        for poly in polygons:
            if yc < poly[:, 1].min() or yc > poly[:, 1].max():
                continue
            for a, b in _row_intervals(poly, yc):
                first = int(np.ceil(a - 0.5))
                last = int(np.floor(b - 0.5))
                first, last = max(first, 0), min(last, width - 1)
                if first <= last:
                    lo.append(first)
                    hi.append(last)
        if not lo:
            out[y + 1] = out[y]
            continue
        diff = np.zeros(width + 1, dtype=np.int64)
        np.add.at(diff, lo, 1)
        np.add.at(diff, np.asarray(hi) + 1, -1)
        inside = np.cumsum(diff[:width]) > 0
        prefix = np.concatenate(([0], np.cumsum(inside)))
        out[y + 1] = out[y] + prefix[xs]
    return out


def block_mean_downsample(patch: np.ndarray, size: int) -> np.ndarray:
    """Média exata por blocos com arredondamento inteiro half-up"""
    patch = np.asarray(patch)
    P = patch.shape[0]
    if patch.shape[1] != P or P % size != 0:
        raise ParameterError(f"Patch {patch.shape[:2]} não é divisível em blocos de {size}")
    f = P // size
    n = f * f
    sums = patch.reshape(size, f, size, f, -1).astype(np.int64).sum(axis=(1, 3))
    return ((2 * sums + n) // (2 * n)).astype(np.uint8)


def candidate_positions(slide_shape: Tuple[int, ...], ann: Annotation, spec: TileSpec) -> List[Tuple[int, int]]:
    """Posições (x, y) da grade cuja cobertura atinge o limiar, em ordem (y, x)"""
    height, width = int(slide_shape[0]), int(slide_shape[1])
    P = spec.patch_size
    if width < P or height < P:
        raise ParameterError(f"Lâmina {width}x{height} menor que o patch {P}")
    ann.check_bounds(width, height)

    grid_x = np.arange(0, width - P + 1, spec.stride)
    grid_y = np.arange(0, height - P + 1, spec.stride)
    if not ann.polygons:
        return []

    xs = np.unique(np.concatenate((grid_x, grid_x + P)))
    counts = coverage_counts(ann.polygons, width, int(grid_y[-1]) + P, xs)
    col = {int(x): j for j, x in enumerate(xs)}
    needed = int(np.ceil(spec.coverage_threshold * P * P - 1e-9))

    positions = []
    for y0 in grid_y:
        band = counts[y0 + P] - counts[y0]
        for x0 in grid_x:
            inside = band[col[int(x0) + P]] - band[col[int(x0)]]
            if inside >= needed:
                positions.append((int(x0), int(y0)))
    return positions


def extract_tiles(slide: np.ndarray, ann: Annotation, spec: TileSpec,
                  rng: np.random.Generator) -> List[Patch]:
    """Patches aceitos com posição; acima do limite, subconjunto uniforme semeado"""
    positions = candidate_positions(np.shape(slide), ann, spec)
    if len(positions) > spec.max_per_slide:
        chosen = np.sort(rng.choice(len(positions), size=spec.max_per_slide, replace=False))
        positions = [positions[i] for i in chosen]

    P = spec.patch_size
    patches = []
    for x0, y0 in positions:
        crop = np.asarray(slide[y0:y0 + P, x0:x0 + P])
        patches.append(Patch(block_mean_downsample(crop, spec.resize_to), ann.label, x0, y0))
    return patches


def extract_patches(slide: np.ndarray, ann: Annotation, spec: TileSpec,
                    rng: np.random.Generator) -> List[Tuple[np.ndarray, str]]:
    return [(p.image, p.label) for p in extract_tiles(slide, ann, spec, rng)]


def write_manifest(entries: Sequence[ManifestEntry], path: str):
    """JSON lines ordenado por (slide_id, y, x)"""
    try:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            for entry in sorted(entries, key=ManifestEntry.sort_key):
                record = {'path': entry.path, 'label': entry.label, 'slide_id': entry.slide_id,
                          'x': int(entry.x), 'y': int(entry.y)}
                f.write(json.dumps(record) + '\n')
    except OSError as e:
        raise ArtifactIOError(f"Erro ao gravar manifesto {path}: {e}")


def read_manifest(path: str) -> List[ManifestEntry]:
    entries = []
    try:
        with open(path, 'r', encoding='utf-8') as f:
            for number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                    entries.append(ManifestEntry(str(data['path']), str(data['label']), str(data['slide_id']),
                                                 int(data['x']), int(data['y'])))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise FormatError(f"Linha {number} inválida em {path}: {e}")
    except FileNotFoundError:
        raise ArtifactIOError(f"Manifesto {path} não encontrado")
    except OSError as e:
        raise ArtifactIOError(f"Erro ao ler manifesto {path}: {e}")
    return entries


def manifest_label_counts(entries: Sequence[ManifestEntry], labels: Optional[Sequence[str]] = None) -> Dict[str, int]:
    """Contagem de patches por rótulo, na ordem de ``labels`` quando informada"""
    counts: Dict[str, int] = {label: 0 for label in (labels or [])}
    for entry in entries:
        counts[entry.label] = counts.get(entry.label, 0) + 1
    return counts


def manifest_dir(path: str) -> str:
    return os.path.dirname(os.path.abspath(path))
