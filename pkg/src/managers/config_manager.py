import copy
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

from ..core.denoiser import ACTIVATIONS
from ..core.diffusion import LossConfig, WEIGHTING_SCHEMES
from ..core.schedule import NoiseSchedule, P2Params, make_linear_schedule
from ..utils.errors import ConfigError, ParameterError


@dataclass(frozen=True)
class ScheduleConfig:
    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass(frozen=True)
class LossSettings:
    weighting: str = "p2"
    c: float = 0.001
    p2_k: float = 1.0
    p2_gamma: float = 1.0


@dataclass(frozen=True)
class ModelConfig:
    hidden_dims: Tuple[int, ...] = (128, 128)
    embed_dim: int = 32
    activation: str = "silu"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch: int = 64
    steps: int = 5000
    seed: int = 0
    log_every: int = 100


@dataclass(frozen=True)
class DataConfig:
    labels: Tuple[str, ...] = ("IDHC", "IDHNC", "IDHWT")
    patch: int = 512
    stride: int = 512
    resize: int = 128
    max_per_slide: int = 100
    coverage: float = 1.0


@dataclass(frozen=True)
class StainConfig:
    lambda_sparse: float = 0.1
    iters: int = 200
    background_threshold: float = 0.15


@dataclass(frozen=True)
class MetricsConfig:
    k: int = 3
    zscore: bool = False


@dataclass(frozen=True)
class RunConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    loss: LossSettings = field(default_factory=LossSettings)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    stain: StainConfig = field(default_factory=StainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['model']['hidden_dims'] = list(self.model.hidden_dims)
        data['data']['labels'] = list(self.data.labels)
        return data

    def build_schedule(self) -> NoiseSchedule:
        return make_linear_schedule(self.schedule.steps, self.schedule.beta_start, self.schedule.beta_end)

    def build_loss_config(self) -> LossConfig:
        return LossConfig(self.loss.weighting, self.loss.c, P2Params(self.loss.p2_k, self.loss.p2_gamma))


_SECTION_TYPES = {
    'schedule': ScheduleConfig, 'loss': LossSettings, 'model': ModelConfig, 'train': TrainConfig,
    'data': DataConfig, 'stain': StainConfig, 'metrics': MetricsConfig,
}


def _coerce(section: str, key: str, default: Any, value: Any) -> Any:
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} deve ser booleano, recebido {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} deve ser inteiro, recebido {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} deve ser numérico, recebido {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} deve ser texto, recebido {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where} deve ser uma lista, recebido {value!r}")
        item_type = type(default[0]) if default else str
        if any(isinstance(v, bool) or not isinstance(v, item_type) for v in value):
            raise ConfigError(f"{where} deve conter apenas valores {item_type.__name__}")
        return tuple(value)
    raise ConfigError(f"{where}: tipo não suportado")


def _validate(config: RunConfig):
    s, loss, m, t, d, st, mt = (config.schedule, config.loss, config.model, config.train,
                                config.data, config.stain, config.metrics)
    checks = [
        (s.steps >= 1, "schedule.steps deve ser >= 1"),
        (0 < s.beta_start <= s.beta_end < 1, "schedule exige 0 < beta_start <= beta_end < 1"),
        (loss.weighting in WEIGHTING_SCHEMES, f"loss.weighting deve ser um de {list(WEIGHTING_SCHEMES)}"),
        (loss.c >= 0, "loss.c deve ser >= 0"),
        (loss.p2_k >= 0 and loss.p2_gamma >= 0, "loss.p2_k e loss.p2_gamma devem ser >= 0"),
        (all(h >= 1 for h in m.hidden_dims), "model.hidden_dims deve conter inteiros >= 1"),
        (m.embed_dim >= 2 and m.embed_dim % 2 == 0, "model.embed_dim deve ser par e >= 2"),
        (m.activation in ACTIVATIONS, f"model.activation deve ser um de {list(ACTIVATIONS)}"),
        (t.lr > 0, "train.lr deve ser > 0"),
        (t.batch >= 1, "train.batch deve ser >= 1"),
        (t.steps >= 0, "train.steps deve ser >= 0"),
        (t.log_every >= 1, "train.log_every deve ser >= 1"),
        (len(d.labels) >= 1 and len(set(d.labels)) == len(d.labels), "data.labels deve ser não vazio e sem repetição"),
        (d.patch >= d.resize >= 1 and d.patch % d.resize == 0, "data.patch deve ser múltiplo de data.resize"),
        (d.stride >= 1 and d.max_per_slide >= 1, "data.stride e data.max_per_slide devem ser >= 1"),
        (0 < d.coverage <= 1, "data.coverage deve estar em (0, 1]"),
        (st.lambda_sparse >= 0 and st.iters >= 0, "stain.lambda_sparse e stain.iters devem ser >= 0"),
        (st.background_threshold >= 0, "stain.background_threshold deve ser >= 0"),
        (mt.k >= 1, "metrics.k deve ser >= 1"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)


def parse_config(data: Dict[str, Any]) -> RunConfig:
    """Mescla ``data`` sobre os padrões; seções e chaves desconhecidas são rejeitadas"""
    if not isinstance(data, dict):
        raise ConfigError("Configuração deve ser um objeto JSON")
    unknown = sorted(set(data) - set(_SECTION_TYPES))
    if unknown:
        raise ConfigError(f"Seções desconhecidas na configuração: {unknown}")

    sections = {}
    for name, cls in _SECTION_TYPES.items():
        values = data.get(name, {})
        if not isinstance(values, dict):
            raise ConfigError(f"Seção {name} deve ser um objeto")
        defaults = cls()
        known = {f.name for f in fields(cls)}
        extra = sorted(set(values) - known)
        if extra:
            raise ConfigError(f"Chaves desconhecidas em {name}: {extra}")
        kwargs = {key: _coerce(name, key, getattr(defaults, key), value) for key, value in values.items()}
        sections[name] = cls(**kwargs)

    config = RunConfig(**sections)
    _validate(config)
    return config


class ConfigManager:
    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file
        self.config = self.load_config()

    def load_config(self) -> RunConfig:
        """Carrega configurações do arquivo JSON (padrões se nenhum arquivo for informado)"""
        if not self.config_file:
            return RunConfig()
        try:
            with open(self.config_file, 'r', encoding='utf-8') as f:
                return parse_config(json.load(f))
        except FileNotFoundError:
            raise ConfigError(f"Arquivo de configuração {self.config_file} não encontrado")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Erro ao decodificar JSON: {e}")

    def save_config(self, path: Optional[str] = None):
        """Salva a configuração efetiva no arquivo JSON"""
        target = path or self.config_file
        if not target:
            raise ParameterError("Nenhum arquivo de configuração para salvar")
        with open(target, 'w', encoding='utf-8') as f:
            json.dump(self.config.to_dict(), f, indent=4, ensure_ascii=False)

    def override(self, section: str, **values) -> RunConfig:
        """Aplica valores de linha de comando (None é ignorado) e revalida"""
        data = copy.deepcopy(self.config.to_dict())
        for key, value in values.items():
            if value is not None:
                data[section][key] = list(value) if isinstance(value, tuple) else value
        self.config = parse_config(data)
        return self.config

    def get_labels(self) -> List[str]:
        return list(self.config.data.labels)
