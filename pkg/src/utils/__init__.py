"""
Módulo utils - Utilitários e ferramentas auxiliares.
"""
