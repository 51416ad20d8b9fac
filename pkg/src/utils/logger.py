import logging
import os
import sys
from datetime import datetime
from typing import Optional
from colorama import Fore, Style, init

# Inicializa colorama para Windows
init()


class Logger:
    """
    Logger do sistema.

    Mensagens legíveis vão para stderr com cores; stdout fica reservado para
    os relatórios JSON. Se ``log_dir`` for informado, tudo também é gravado em
    arquivo.
    """

    def __init__(self, log_dir: Optional[str] = None, level: str = "INFO", quiet: bool = False,
                 name: str = "mdf"):
        self.log_dir = log_dir
        self.quiet = quiet
        self.level = logging.getLevelName(level.upper())
        if not isinstance(self.level, int):
            self.level = logging.INFO

        self.logger = logging.getLogger(f"{name}.{id(self)}")
        self.logger.setLevel(self.level)
        self.logger.propagate = False
        self.log_file = None

        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
            self.log_file = os.path.join(log_dir, f"mdf_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log")
            handler = logging.FileHandler(self.log_file, encoding='utf-8')
            handler.setFormatter(logging.Formatter('%(asctime)s - %(levelname)s - %(message)s'))
            self.logger.addHandler(handler)
        else:
            self.logger.addHandler(logging.NullHandler())

    def _emit(self, level: int, color: str, tag: str, message: str):
        if self.quiet or level < self.level:
            return
        print(f"{color}[{tag}]{Style.RESET_ALL} {message}", file=sys.stderr)

    def debug(self, message):
        """Log de depuração"""
        self.logger.debug(message)
        self._emit(logging.DEBUG, Fore.WHITE, "DEBUG", message)

    def info(self, message):
        """Log informações"""
        self.logger.info(message)
        self._emit(logging.INFO, Fore.BLUE, "INFO", message)

    def success(self, message):
        """Log sucesso"""
        self.logger.info(f"SUCCESS: {message}")
        self._emit(logging.INFO, Fore.GREEN, "SUCCESS", message)

    def warning(self, message):
        """Log avisos"""
        self.logger.warning(message)
        self._emit(logging.WARNING, Fore.YELLOW, "WARNING", message)

    def error(self, message):
        """Log erros"""
        self.logger.error(message)
        self._emit(logging.ERROR, Fore.RED, "ERROR", message)

    def critical(self, message):
        """Log erros críticos"""
        self.logger.critical(message)
        self._emit(logging.CRITICAL, Fore.RED, "CRITICAL", message)

    def close(self):
        """Fecha os handlers de arquivo"""
        for handler in list(self.logger.handlers):
            handler.close()
            self.logger.removeHandler(handler)
