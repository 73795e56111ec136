"""hjlab: kicked Hamilton-Jacobi equations on the torus, numerically."""

__version__ = "0.1.0"
