"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

LINES = []


def record(number, title, ok, detail, seconds):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title} ({detail}; {seconds:.2f} s)"
    LINES.append(line)
    print(line)
    return ok
