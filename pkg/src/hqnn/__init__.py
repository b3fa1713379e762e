"""Hybrid quantum-classical image classifiers on a from-scratch statevector simulator."""
__version__ = "0.1.0"
