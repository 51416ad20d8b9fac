"""
Módulo core - Difusão condicional e treino.
"""
