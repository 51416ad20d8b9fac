"""
Exceções do sistema.

Cada exceção carrega o código de saída usado pela interface de linha de
comando: 2 para erros de uso/validação e 3 para erros de execução/numéricos.
"""

EXIT_USAGE = 2
EXIT_RUNTIME = 3


class MdfError(Exception):
    """Erro base do sistema"""
    exit_code = EXIT_USAGE


class ParameterError(MdfError, ValueError):
    """Parâmetro fora do domínio válido"""


class TimestepIndexError(MdfError, IndexError):
    """Passo de difusão fora do intervalo 1..T"""


class ShapeError(MdfError, ValueError):
    """Dimensões incompatíveis"""


class ValidationError(MdfError, ValueError):
    """Entrada que viola um invariante do tipo"""


class InsufficientDataError(MdfError, ValueError):
    """Poucas amostras para a estatística pedida"""


class DegenerateInputError(MdfError, ValueError):
    """Entrada degenerada (ex: imagem só com fundo)"""


class ConfigError(MdfError, ValueError):
    """Configuração inválida"""


class FormatError(MdfError, ValueError):
    """Arquivo binário ou texto em formato inválido"""


class NumericError(MdfError, ArithmeticError):
    """Falha numérica (ex: covariância não semi-definida)"""
    exit_code = EXIT_RUNTIME


class ArtifactIOError(MdfError, OSError):
    """Falha de leitura/escrita de artefatos"""
    exit_code = EXIT_RUNTIME
