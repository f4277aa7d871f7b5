"""Shared store of acceptance outcomes, printed at the end of the run."""

RESULTS = []


def record(criterion, ok, detail):
    RESULTS.append((criterion, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}")
