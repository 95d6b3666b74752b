"""Error-tradeoff bounds for jointly approximating incompatible observables."""

__version__ = "0.1.0"
