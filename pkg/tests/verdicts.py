"""Collected PASS/FAIL lines of the acceptance run."""

VERDICTS: list[str] = []


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} -- {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line
