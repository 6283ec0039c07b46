"""Compress a declared network to fit an edge device, then distill it.

The package is organised around a small pipeline:

- :mod:`edgeslim.archspec` declares architectures as plain data.
- :mod:`edgeslim.resources` prices them in parameters / FLOPs against a
  device profile.
- :mod:`edgeslim.pruning` thins connections by magnitude dropout.
- :mod:`edgeslim.compressor` rewrites layers (low-rank factorization,
  gate-reduced recurrent cells) until the device budgets hold.
- :mod:`edgeslim.distill` trains the shrunken student under a trainee
  teacher and a pretrained teacher, with an early halting point.
- :mod:`edgeslim.pipeline` sweeps candidate depths and picks the winner.
"""

__version__ = "0.1.0"

from edgeslim.archspec import LayerKind, LayerSpec, NetworkSpec

__all__ = ["LayerKind", "LayerSpec", "NetworkSpec", "__version__"]
