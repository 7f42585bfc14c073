"""Reconfigurable production-inventory control under Markov-modulated demand."""

__version__ = "1.0.0"
