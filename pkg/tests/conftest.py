import pytest


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line that survives output capture, then return the verdict."""

    def _report(tag: str, ok: bool, detail: str = "") -> bool:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {tag}: {detail}", flush=True)
        return ok

    return _report
