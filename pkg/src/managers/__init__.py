"""
Módulo managers - Gerenciadores do sistema.
"""
