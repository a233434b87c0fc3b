"""
Jerarquía de errores de GQ-STN
Cada error lleva el código de salida que usa main.py
"""

from typing import Optional


class GQSTNError(Exception):
    """Error base del proyecto"""
    exit_code = 2

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message)
        self.details = details or {}


class ConfigError(GQSTNError):
    """Configuración inválida o uso incorrecto"""
    exit_code = 1


class DataError(GQSTNError):
    """Fallos de E/S, shards corruptos, solapamiento de splits"""
    exit_code = 2


class NumericalError(GQSTNError):
    """NaN/Inf en pérdidas o funciones no deterministas"""
    exit_code = 3


class ShapeError(GQSTNError):
    """Formas de tensores o imágenes incompatibles"""
    exit_code = 3


class FrozenModelError(GQSTNError):
    """Intento de modificar un modelo congelado"""
    exit_code = 3
