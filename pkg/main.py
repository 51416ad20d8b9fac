#!/usr/bin/env python3
"""
Síntese de Histopatologia Condicionada por Genótipo

Difusão condicional com ponderação P2, normalização de coloração, recorte de
patches anotados e métricas de avaliação (IS, FID, sFID, precision/recall e
teste exato de Fisher).

Sem sub-comando, abre o menu interativo.
"""

import sys
from typing import List, Optional

from src.interface.cli_interface import CLIInterface, build_parser
from src.utils.errors import EXIT_RUNTIME, MdfError
from src.utils.logger import Logger

EXIT_INTERRUPTED = 130


def main(argv: Optional[List[str]] = None) -> int:
    """Função principal do sistema; retorna o código de saída"""
    parser = build_parser()
    args = parser.parse_args(argv)
    logger = Logger(log_dir=args.log_dir, level=args.log_level, quiet=args.quiet)

    try:
        cli = CLIInterface(logger, args.config)
        if args.command is None:
            cli.run(parser)
        else:
            cli.execute(args)
        return 0

    except KeyboardInterrupt:
        print("\n\nSistema interrompido pelo usuário.", file=sys.stderr)
        return EXIT_INTERRUPTED
    except MdfError as e:
        logger.error(str(e))
        return e.exit_code
    except Exception as e:
        logger.critical(f"Erro fatal: {e}")
        return EXIT_RUNTIME
    finally:
        logger.close()


if __name__ == "__main__":
    sys.exit(main())
