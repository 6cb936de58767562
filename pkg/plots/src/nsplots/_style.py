"""Pinned rendering configuration for byte-stable figure output."""

import matplotlib

matplotlib.use("Agg", force=True)

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

RC = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "grid.linewidth": 0.5,
    "lines.linewidth": 1.5,
    "legend.framealpha": 1.0,
    "axes.prop_cycle": matplotlib.cycler(
        color=["#1f77b4", "#d62728", "#2ca02c"]
    ),
}


def apply_style() -> None:
    """Install the pinned rcParams; every script calls this before drawing."""
    matplotlib.rcParams.update(RC)


def new_figure(ncols: int = 1):
    """A figure sized for ``ncols`` side-by-side panels; the caller closes it."""
    width = RC["figure.figsize"][0] * (1.6 if ncols == 2 else 1.0)
    return plt.subplots(1, ncols, figsize=(width, RC["figure.figsize"][1]))


def save_png(fig, out: str) -> None:
    """Write a PNG with no software/version metadata so bytes depend only on
    the drawn content."""
    fig.savefig(out, format="png", metadata={"Software": None})
    plt.close(fig)
