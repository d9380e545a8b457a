"""Polycrystal homogenization surrogates.

Subpackages cover orientation algebra, two-phase interaction blocks, the
binary-tree material network, texture clustering/sampling, synthetic RVE
generation, grain graphs, the graph-attention parameter predictor, an
FFT elasticity reference solver, crystal-plasticity online prediction,
and metrics.
"""

__version__ = "0.1.0"
