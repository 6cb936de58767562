"""2D Taylor-Hood Navier-Stokes solver with relaxed incompressibility.

The package implements a family of time discretizations in which the
divergence constraint is replaced by an evolution equation combining a
divergence penalty with artificial compression, plus the two classical
single-mechanism baselines, and a benchmark harness around them.
"""

__version__ = "0.1.0"
