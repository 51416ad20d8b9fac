"""
Pacote principal do sistema de síntese histopatológica por difusão condicional.
"""

__version__ = "1.0.0"
__author__ = "Sistema Automatizado"
