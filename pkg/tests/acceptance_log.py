"""Collects one summary line per acceptance criterion for the terminal report."""

LINES = {}


def record(number, passed, detail):
    LINES[str(number)] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(LINES[str(number)])
    return passed
