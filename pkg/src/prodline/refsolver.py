"""Reference external solver: reads an LP file, writes a plain solution file.

Exists so the external-backend plumbing (export, subprocess invocation,
solution parsing) can be exercised end to end without a third-party solver
binary.  Usage: ``python -m prodline.refsolver MODEL.lp MODEL.sol``.
"""

from __future__ import annotations

import sys

from prodline.milp import parse_lp_file, solve_lp, solve_milp


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: python -m prodline.refsolver MODEL.lp MODEL.sol", file=sys.stderr)
        return 2
    lp_path, sol_path = argv
    model = parse_lp_file(lp_path)
    result = solve_milp(model) if model.has_integers() else solve_lp(model)
    lines = [f"status {result.status}"]
    if result.status in ("optimal", "limit"):
        lines.append(f"objective {result.objective:.17g}")
        for name, value in result.values.items():
            lines.append(f"{name} {value:.17g}")
    with open(sol_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
