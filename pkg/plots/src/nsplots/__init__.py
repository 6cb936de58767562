"""Static-figure rendering for nsrelax CSV artifacts.

Three script entry points, each reading the solver's CSV schema and writing
a PNG or markdown artifact:

- ``nsplots-norm-evolution``: log-scale norm histories from a time series.
- ``nsplots-damping-comparison``: curvature and divergence panels comparing
  the hybrid, penalty, and compression runs.
- ``nsplots-convergence-table``: markdown rendering of a convergence study.

Rendering is pinned (Agg backend, fixed rcParams, metadata-free PNGs) so
identical inputs produce byte-identical outputs.
"""

from ._csv import MissingColumnError, read_rows

__all__ = ["MissingColumnError", "read_rows"]
