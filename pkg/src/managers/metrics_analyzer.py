"""
Métricas de avaliação de modelos generativos sobre embeddings e
probabilidades: IS, FID, sFID, Precision/Recall melhorados por k-NN e teste
exato de Fisher bilateral para as tabelas 2×2 da pesquisa com patologistas.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import gammaln, logsumexp, rel_entr
from tabulate import tabulate

from ..utils.errors import (InsufficientDataError, NumericError, ParameterError, ShapeError,
                            ValidationError)
from ..utils.logger import Logger

DEFAULT_K = 3
SURVEY_PER_ARM = 40
_CLAMP_TOL = 1e-10
_PSD_TOL = 1e-9
_FISHER_SLACK = 1e-12
_CHUNK_ROWS = 1024


@dataclass
class FeatureSet:
    matrix: np.ndarray
    space_name: str = "final"

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        if self.matrix.ndim != 2:
            raise ShapeError(f"Features devem ser uma matriz N x F, recebido {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValidationError(f"Features '{self.space_name}' contêm valores não finitos")

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        F = self.mu.size
        if self.sigma.shape != (F, F):
            raise ShapeError(f"sigma com shape {self.sigma.shape}, esperado ({F}, {F})")
        scale = max(1.0, float(np.max(np.abs(self.sigma))) if self.sigma.size else 1.0)
        if np.max(np.abs(self.sigma - self.sigma.T), initial=0.0) > _PSD_TOL * scale:
            raise ValidationError("Covariância não simétrica")


@dataclass
class Contingency2x2:
    """Linhas: verdade (real, sintético); colunas: julgamento (real, sintético)"""
    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        for name in ('a', 'b', 'c', 'd'):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 0:
                raise ValidationError(f"Célula {name} deve ser inteiro >= 0, recebido {value!r}")
            setattr(self, name, int(value))
        if self.a + self.b + self.c + self.d < 1:
            raise ValidationError("Tabela de contingência vazia")

    def as_list(self) -> List[int]:
        return [self.a, self.b, self.c, self.d]


def gaussian_stats(f: FeatureSet) -> GaussianStats:
    if f.n < 2:
        raise InsufficientDataError(f"São necessárias ao menos 2 amostras, recebido {f.n}")
    mu = f.matrix.mean(axis=0)
    sigma = np.atleast_2d(np.cov(f.matrix, rowvar=False, ddof=1))
    return GaussianStats(mu, sigma)


def _psd_eigvals(w: np.ndarray, what: str) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(w), initial=0.0)))
    if np.any(w < -_PSD_TOL * scale):
        raise NumericError(f"{what} não é semidefinida positiva (autovalor mínimo {w.min():.3e})")
    return np.where(w < _CLAMP_TOL * scale, 0.0, w)


def fid(r: GaussianStats, g: GaussianStats) -> float:
    """
    ‖μ_r − μ_g‖² + Tr(Σ_r + Σ_g − 2(Σ_rΣ_g)^{1/2}), com o traço da raiz
    calculado como Tr((Σ_r^{1/2} Σ_g Σ_r^{1/2})^{1/2}) por autodecomposição simétrica.
    """
    if r.mu.shape != g.mu.shape:
        raise ShapeError(f"Dimensões diferentes: {r.mu.size} e {g.mu.size}")
    if np.array_equal(r.mu, g.mu) and np.array_equal(r.sigma, g.sigma):
        return 0.0

    w, V = np.linalg.eigh((r.sigma + r.sigma.T) / 2)
    root_r = (V * np.sqrt(_psd_eigvals(w, "Σ_r"))) @ V.T
    inner = root_r @ g.sigma @ root_r
    inner_w = np.linalg.eigvalsh((inner + inner.T) / 2)
    _psd_eigvals(np.linalg.eigvalsh((g.sigma + g.sigma.T) / 2), "Σ_g")
    trace_sqrt = float(np.sum(np.sqrt(_psd_eigvals(inner_w, "Σ_r^½ Σ_g Σ_r^½"))))

    diff = r.mu - g.mu
    value = float(diff @ diff + np.trace(r.sigma) + np.trace(g.sigma) - 2.0 * trace_sqrt)
    return max(0.0, value)


def sfid(r_spatial: FeatureSet, g_spatial: FeatureSet) -> float:
    """FID sobre o espaço de features espaciais; os dois conjuntos devem ter o mesmo espaço"""
    if r_spatial.space_name != g_spatial.space_name:
        raise ParameterError(
            f"Espaços de features diferentes: '{r_spatial.space_name}' e '{g_spatial.space_name}'"
        )
    return fid(gaussian_stats(r_spatial), gaussian_stats(g_spatial))


def validate_prob_table(p) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
        raise ShapeError(f"Tabela de probabilidades deve ser N x C, recebido {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValidationError("Probabilidades devem ser finitas e não negativas")
    bad = np.flatnonzero(np.abs(p.sum(axis=1) - 1.0) > 1e-9)
    if bad.size:
        raise ValidationError(f"Linha {int(bad[0])} não soma 1 (soma {p[bad[0]].sum():.12f})")
    return p


def inception_score(p) -> float:
    """exp(média das KL(p(y|x) ‖ p(y))), com p(y) a média das linhas"""
    p = validate_prob_table(p)
    marginal = p.mean(axis=0)
    kl = rel_entr(p, marginal[None, :]).sum(axis=1)
    return float(np.exp(max(0.0, float(kl.mean()))))


def pairwise_distances(x: np.ndarray, y: np.ndarray, threads: int = 1) -> np.ndarray:
    """Distâncias euclidianas em blocos de linhas; cada bloco escreve sua própria fatia"""
    out = np.empty((x.shape[0], y.shape[0]))
    starts = list(range(0, x.shape[0], _CHUNK_ROWS))

    def work(start: int):
        stop = min(start + _CHUNK_ROWS, x.shape[0])
        out[start:stop] = cdist(x[start:stop], y, metric='euclidean')

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)
    return out


def _check_k(k: int, n: int):
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ParameterError(f"k deve ser inteiro >= 1, recebido {k!r}")
    if k >= n:
        raise ParameterError(f"k ({k}) deve ser menor que o número de amostras ({n})")


def knn_radii(f: FeatureSet, k: int, threads: int = 1) -> np.ndarray:
    """Distância de cada linha ao seu k-ésimo vizinho mais próximo (excluindo a própria linha)"""
    _check_k(k, f.n)
    d = pairwise_distances(f.matrix, f.matrix, threads)
    np.fill_diagonal(d, np.inf)
    return np.partition(d, int(k) - 1, axis=1)[:, int(k) - 1]


def _manifold_coverage(ref: FeatureSet, query: FeatureSet, k: int, threads: int) -> float:
    if ref.n < 1 or query.n < 1:
        raise InsufficientDataError("Conjuntos de features vazios")
    if ref.dim != query.dim:
        raise ShapeError(f"Dimensões diferentes: {ref.dim} e {query.dim}")
    radii = knn_radii(ref, k, threads)
    d = pairwise_distances(query.matrix, ref.matrix, threads)
    inside = np.any(d <= radii[None, :], axis=1)
    return float(inside.mean())


def improved_precision(real_f: FeatureSet, gen_f: FeatureSet, k: int = DEFAULT_K, threads: int = 1) -> float:
    """Fração das amostras geradas dentro da variedade real (união de bolas k-NN)"""
    return _manifold_coverage(real_f, gen_f, k, threads)


def improved_recall(real_f: FeatureSet, gen_f: FeatureSet, k: int = DEFAULT_K, threads: int = 1) -> float:
    return _manifold_coverage(gen_f, real_f, k, threads)


def _log_comb(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def fisher_exact_two_sided(t: Contingency2x2) -> float:
    """
    Soma das probabilidades hipergeométricas das tabelas com as mesmas margens
    e probabilidade pontual <= a observada. Margem zero → 1.0; se todas as
    tabelas do suporte entram na soma, o resultado é exatamente 1.0.
    """
    row1, row2 = t.a + t.b, t.c + t.d
    col1, col2 = t.a + t.c, t.b + t.d
    if min(row1, row2, col1, col2) == 0:
        return 1.0
    n = row1 + row2

    support = np.arange(max(0, col1 - row2), min(row1, col1) + 1)
    logp = _log_comb(row1, support) + _log_comb(row2, col1 - support) - _log_comb(n, col1)
    observed = _log_comb(row1, t.a) + _log_comb(row2, t.c) - _log_comb(n, col1)
    keep = logp <= observed + _FISHER_SLACK * max(1.0, abs(observed))
    if keep.all():
        return 1.0
    return float(min(1.0, np.exp(logsumexp(logp[keep]))))


def contingency_from_fractions(fractions: Sequence[float], per_arm: int = SURVEY_PER_ARM) -> Contingency2x2:
    """
    Frações julgadas (real→real, real→sintético, sintético→real,
    sintético→sintético) × imagens por braço → contagens inteiras.
    """
    if len(fractions) != 4:
        raise ParameterError(f"São necessárias 4 frações, recebido {len(fractions)}")
    if per_arm < 1:
        raise ParameterError(f"per_arm deve ser >= 1, recebido {per_arm}")
    counts = []
    for value in fractions:
        raw = float(value) * per_arm
        rounded = round(raw)
        if abs(raw - rounded) > 1e-6 or rounded < 0:
            raise ValidationError(f"Fração {value} não corresponde a uma contagem inteira com {per_arm} por braço")
        counts.append(int(rounded))
    return Contingency2x2(*counts)


CONFIDENCE_COLUMNS = ("real_high", "real_med", "syn_med", "syn_high")


@dataclass
class ConfidenceBreakdown:
    """
    Julgamentos de um avaliador separados pela confiança declarada.

    Linhas: verdade (real, sintético); colunas: CONFIDENCE_COLUMNS, ou seja,
    julgado real com confiança alta/média e julgado sintético com
    confiança média/alta. Cada linha soma 1.
    """
    fractions: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.fractions, dtype=np.float64)
        if values.size != 8:
            raise ParameterError(f"São necessárias 8 frações por avaliador, recebido {values.size}")
        values = values.reshape(2, 4)
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValidationError("Frações de confiança devem ser finitas e não negativas")
        sums = values.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ValidationError(f"Cada verdade deve somar 1, somas {sums.tolist()}")
        self.fractions = values

    def collapsed(self) -> List[float]:
        """Frações real→real, real→sintético, sintético→real, sintético→sintético"""
        judged_real = self.fractions[:, :2].sum(axis=1)
        judged_syn = self.fractions[:, 2:].sum(axis=1)
        return [float(judged_real[0]), float(judged_syn[0]), float(judged_real[1]), float(judged_syn[1])]

    def contingency(self, per_arm: int = SURVEY_PER_ARM) -> Contingency2x2:
        return contingency_from_fractions(self.collapsed(), per_arm)

    def high_confidence_share(self) -> Dict[str, Optional[float]]:
        """Fração dos acertos dados com confiança alta, por verdade (None sem acertos)"""
        real_hits = self.fractions[0, 0] + self.fractions[0, 1]
        syn_hits = self.fractions[1, 2] + self.fractions[1, 3]
        return {
            'real': float(self.fractions[0, 0] / real_hits) if real_hits > 0 else None,
            'synthetic': float(self.fractions[1, 3] / syn_hits) if syn_hits > 0 else None,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            'real': dict(zip(CONFIDENCE_COLUMNS, (float(v) for v in self.fractions[0]))),
            'synthetic': dict(zip(CONFIDENCE_COLUMNS, (float(v) for v in self.fractions[1]))),
            'high_confidence_share': self.high_confidence_share(),
        }


def zscore(real: FeatureSet, gen: FeatureSet):
    """Padroniza os dois conjuntos com média e desvio do conjunto real"""
    mean = real.matrix.mean(axis=0)
    std = real.matrix.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (FeatureSet((real.matrix - mean) / std, real.space_name),
            FeatureSet((gen.matrix - mean) / std, gen.space_name))


class MetricsAnalyzer:
    """Relatório de avaliação e análise da pesquisa com patologistas"""

    def __init__(self, logger: Logger, k: int = DEFAULT_K, use_zscore: bool = False, threads: int = 1):
        self.logger = logger
        self.k = k
        self.use_zscore = use_zscore
        self.threads = max(1, int(threads))

    def evaluate(self, real: FeatureSet, gen: FeatureSet, real_spatial: Optional[FeatureSet] = None,
                 gen_spatial: Optional[FeatureSet] = None, probs: Optional[np.ndarray] = None) -> Dict[str, Any]:
        """Relatório {is, fid, sfid, precision, recall, k, n_real, n_gen}"""
        try:
            self.logger.info(f"Avaliando {gen.n} amostras geradas contra {real.n} reais (k={self.k})")
            fid_value = fid(gaussian_stats(real), gaussian_stats(gen))

            if real_spatial is None and gen_spatial is None:
                sfid_value = sfid(real, gen)
            elif real_spatial is None or gen_spatial is None:
                raise ParameterError("Informe features espaciais para os dois conjuntos")
            else:
                sfid_value = sfid(real_spatial, gen_spatial)

            knn_real, knn_gen = zscore(real, gen) if self.use_zscore else (real, gen)
            precision = improved_precision(knn_real, knn_gen, self.k, self.threads)
            recall = improved_recall(knn_real, knn_gen, self.k, self.threads)
            is_value = inception_score(probs) if probs is not None else None
        except Exception as e:
            self.logger.error(f"Erro na avaliação: {e}")
            raise

        report = {
            'is': is_value,
            'fid': fid_value,
            'sfid': sfid_value,
            'precision': precision,
            'recall': recall,
            'k': int(self.k),
            'n_real': real.n,
            'n_gen': gen.n,
        }
        self.logger.success(f"FID {fid_value:.6f}, precision {precision:.4f}, recall {recall:.4f}")
        return report

    def report_table(self, report: Dict[str, Any]) -> str:
        rows = [[key, "-" if value is None else value] for key, value in report.items()]
        return tabulate(rows, headers=["Métrica", "Valor"], tablefmt='grid')

    def survey(self, tables: Sequence[Contingency2x2],
               breakdowns: Optional[Sequence[Optional[ConfidenceBreakdown]]] = None) -> List[Dict[str, Any]]:
        """
        p-valor de Fisher bilateral por avaliador. ``breakdowns``, se
        informado, acompanha ``tables`` posição a posição e acrescenta a
        separação por confiança ao resultado.
        """
        if breakdowns is not None and len(breakdowns) != len(tables):
            raise ParameterError(f"{len(breakdowns)} separações por confiança para {len(tables)} tabelas")
        results = []
        for index, table in enumerate(tables, start=1):
            p_value = fisher_exact_two_sided(table)
            self.logger.info(f"Avaliador {index}: tabela {table.as_list()} → p = {p_value:.5f}")
            result = {'rater': index, 'table': table.as_list(), 'p': p_value}
            breakdown = breakdowns[index - 1] if breakdowns is not None else None
            if breakdown is not None:
                result['confidence'] = breakdown.to_dict()
                share = result['confidence']['high_confidence_share']['synthetic']
                if share is not None:
                    self.logger.info(f"Avaliador {index}: {share:.1%} dos sintéticos identificados com confiança alta")
            results.append(result)
        return results

    def confidence_table(self, results: Sequence[Dict[str, Any]]) -> str:
        rows = []
        for r in results:
            if 'confidence' not in r:
                continue
            for truth, name in (('real', "Real"), ('synthetic', "Sint.")):
                cells = r['confidence'][truth]
                rows.append([f"P{r['rater']}", name, *(cells[c] for c in CONFIDENCE_COLUMNS)])
        headers = ["Avaliador", "Verdade", "Real alta", "Real média", "Sint. média", "Sint. alta"]
        return tabulate(rows, headers=headers, tablefmt='grid')

    def survey_table(self, results: Sequence[Dict[str, Any]]) -> str:
        rows = [[f"P{r['rater']}", *r['table'], f"{r['p']:.5f}"] for r in results]
        headers = ["Avaliador", "real→real", "real→sint.", "sint.→real", "sint.→sint.", "p (Fisher)"]
        return tabulate(rows, headers=headers, tablefmt='grid')
