"""Curvature and divergence comparison panels for three damping-study runs."""

import argparse
import sys

from ._csv import MissingColumnError, floats, pairs, read_rows
from ._style import apply_style, new_figure, save_png

REQUIRED = ("t", "norm_div_w", "kappa")
METHODS = ("hybrid", "pp", "ac")


def build_figure(series):
    """``series`` maps method name -> CSV rows, in METHODS order."""
    fig, (ax_kappa, ax_div) = new_figure(ncols=2)
    for method in METHODS:
        rows = series[method]
        # kappa needs three time levels, so the first two fields are empty
        ax_kappa.plot(*pairs(rows, "t", "kappa"), label=method)
        ax_div.plot(floats(rows, "t"), floats(rows, "norm_div_w"), label=method)
    for ax, title, ylabel in (
        (ax_kappa, "Discrete pressure curvature", "kappa"),
        (ax_div, "Divergence norm", "||div w||"),
    ):
        ax.set_yscale("log")
        ax.set_xlabel("t")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(loc="best")
    fig.tight_layout()
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nsplots-damping-comparison",
        description="Plot kappa and ||div w|| panels comparing three "
        "damping-study CSVs, given in hybrid, pp, ac order.",
    )
    parser.add_argument("--in", dest="inputs", required=True, action="append",
                        metavar="CSV",
                        help="damping-study CSV; pass exactly three times "
                        "(hybrid, pp, ac)")
    parser.add_argument("--out", dest="output", required=True,
                        help="output PNG path")
    args = parser.parse_args(argv)
    if len(args.inputs) != 3:
        print(f"error: need exactly three --in files (hybrid, pp, ac), "
              f"got {len(args.inputs)}", file=sys.stderr)
        return 2

    try:
        series = {m: read_rows(p, REQUIRED)
                  for m, p in zip(METHODS, args.inputs)}
    except (MissingColumnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    apply_style()
    save_png(build_figure(series), args.output)
    return 0


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
