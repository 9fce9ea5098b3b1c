"""Per-criterion outcome lines collected by the acceptance suite."""
import time
from contextlib import contextmanager

RESULTS = {}


def _record(number, line):
    RESULTS[number] = line
    print(line)


@contextmanager
def criterion(number, title, budget=None):
    """Record ``PASS``/``FAIL`` for one criterion and print the line.

    ``budget`` is the allowed wall time in seconds; exceeding it fails the
    criterion.  Values put into the yielded dict are echoed on the line.
    """
    t0 = time.perf_counter()
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        msg = (str(exc).splitlines() or [type(exc).__name__])[0]
        _record(number, f"criterion {number:2d} FAIL  {title} ({time.perf_counter() - t0:.1f}s): {msg}")
        raise
    elapsed = time.perf_counter() - t0
    extra = ", ".join(f"{k}={v}" for k, v in detail.items())
    if budget is not None and elapsed > budget:
        _record(number, f"criterion {number:2d} FAIL  {title} ({elapsed:.1f}s > {budget:g}s budget)")
        raise AssertionError(f"criterion {number} took {elapsed:.1f}s, budget {budget:g}s")
    _record(number, f"criterion {number:2d} PASS  {title} ({elapsed:.1f}s)" + (f": {extra}" if extra else ""))
