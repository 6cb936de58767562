"""Log-scale norm histories from one solver time-series CSV."""

import argparse
import sys

from ._csv import MissingColumnError, floats, read_rows
from ._style import apply_style, new_figure, save_png

REQUIRED = ("t", "norm_w", "norm_div_w", "norm_lambda")
SERIES = (
    ("norm_w", "||w||"),
    ("norm_div_w", "||div w||"),
    ("norm_lambda", "||lambda||"),
)


def build_figure(rows):
    fig, ax = new_figure()
    t = floats(rows, "t")
    for column, label in SERIES:
        ax.plot(t, floats(rows, column), label=label)
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("norm")
    ax.set_title("Norm evolution")
    ax.legend(loc="best")
    fig.tight_layout()
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nsplots-norm-evolution",
        description="Plot ||w||, ||div w||, ||lambda|| against time on a log "
        "scale from a solver time-series CSV.",
    )
    parser.add_argument("--in", dest="input", required=True,
                        help="time-series CSV path")
    parser.add_argument("--out", dest="output", required=True,
                        help="output PNG path")
    args = parser.parse_args(argv)

    try:
        rows = read_rows(args.input, REQUIRED)
    except (MissingColumnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    apply_style()
    save_png(build_figure(rows), args.output)
    return 0


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
