"""
Módulo interface - Interfaces de usuário.
"""
