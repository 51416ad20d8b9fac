import csv
import os
from typing import List, Optional

import numpy as np

from .diffusion import DenoiserModel, LossConfig, training_loss
from .optimizer import OptimizerState, adam_step
from .schedule import NoiseSchedule
from ..utils.errors import ArtifactIOError, NumericError, ParameterError
from ..utils.logger import Logger


def smooth_losses(losses: List[float], window: int = 100) -> np.ndarray:
    """Média móvel simples (janela truncada no início)"""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        return losses
    window = max(1, min(window, losses.size))
    cumsum = np.concatenate(([0.0], np.cumsum(losses)))
    end = np.arange(1, losses.size + 1)
    start = np.maximum(0, end - window)
    return (cumsum[end] - cumsum[start]) / (end - start)


class Trainer:
    """Orquestra o laço de treino: sorteio do lote, perda, gradientes e Adam"""

    def __init__(self, model: DenoiserModel, schedule: NoiseSchedule, loss_config: LossConfig,
                 optimizer: OptimizerState, logger: Logger):
        self.model = model
        self.schedule = schedule
        self.loss_config = loss_config
        self.optimizer = optimizer
        self.logger = logger
        self.losses: List[float] = []

    def train(self, dataset, steps: int, batch_size: int, rng: np.random.Generator,
              loss_log_path: Optional[str] = None, log_every: int = 100) -> List[float]:
        """Executa ``steps`` atualizações; retorna a perda de cada passo"""
        if steps < 0:
            raise ParameterError(f"steps deve ser >= 0, recebido {steps}")
        if batch_size < 1:
            raise ParameterError(f"batch deve ser >= 1, recebido {batch_size}")
        log_every = max(1, int(log_every))
        scheme = self.loss_config.weighting

        self.logger.info(f"Iniciando treino: {steps} passos, lote {batch_size}, ponderação {scheme}")

        log_file = None
        writer = None
        try:
            if loss_log_path:
                directory = os.path.dirname(loss_log_path)
                if directory:
                    os.makedirs(directory, exist_ok=True)
                log_file = open(loss_log_path, 'w', encoding='utf-8', newline='')
                writer = csv.writer(log_file, lineterminator='\n')
                writer.writerow(['step', 'loss', 'weight_scheme'])

            for step in range(1, steps + 1):
                batch = dataset.draw(batch_size, rng)
                loss, grads = training_loss(self.model, self.schedule, batch, self.loss_config, rng)
                if not np.isfinite(loss):
                    raise NumericError(f"Perda não finita no passo {step}")
                adam_step(self.model, self.optimizer, grads)
                self.losses.append(loss)

                if step % log_every == 0 or step == steps:
                    recent = float(np.mean(self.losses[-log_every:]))
                    if writer is not None:
                        writer.writerow([step, repr(recent), scheme])
                    self.logger.info(f"Passo {step}/{steps}: perda média {recent:.6f}")

        except OSError as e:
            self.logger.error(f"Erro ao gravar log de perda: {e}")
            raise ArtifactIOError(f"Erro ao gravar log de perda {loss_log_path}: {e}")
        except Exception as e:
            self.logger.error(f"Erro no treino: {e}")
            raise
        finally:
            if log_file is not None:
                log_file.close()

        if steps:
            self.logger.success(f"Treino concluído, perda final suavizada {smooth_losses(self.losses)[-1]:.6f}")
        else:
            self.logger.info("Nenhum passo de treino solicitado, mantendo pesos iniciais")
        return list(self.losses)
