"""Markdown rendering of a convergence-study CSV."""

import argparse
import sys

from ._csv import MissingColumnError, read_rows

REQUIRED = ("dt", "err_u", "rate_u", "err_p", "rate_p", "div_norm")
HEADER = "| dt | err_u | rate_u | err_p | rate_p | div_norm |"
RULE = "|---:|---:|---:|---:|---:|---:|"


def _cell(value: str, kind: str) -> str:
    if value == "":
        return "-"
    if kind == "rate":
        return f"{float(value):.2f}"
    if kind == "dt":
        return f"{float(value):g}"
    return f"{float(value):.3e}"


def render(rows) -> str:
    lines = [HEADER, RULE]
    for r in rows:
        lines.append("| " + " | ".join([
            _cell(r["dt"], "dt"),
            _cell(r["err_u"], "err"),
            _cell(r["rate_u"], "rate"),
            _cell(r["err_p"], "err"),
            _cell(r["rate_p"], "rate"),
            _cell(r["div_norm"], "err"),
        ]) + " |")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nsplots-convergence-table",
        description="Render a convergence-study CSV as a markdown table "
        "(errors in scientific notation, rates to two decimals).",
    )
    parser.add_argument("--in", dest="input", required=True,
                        help="convergence CSV path")
    parser.add_argument("--out", dest="output", required=True,
                        help="output markdown path")
    args = parser.parse_args(argv)

    try:
        rows = read_rows(args.input, REQUIRED)
    except (MissingColumnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    with open(args.output, "w", encoding="ascii", newline="\n") as fh:
        fh.write(render(rows))
    return 0


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
