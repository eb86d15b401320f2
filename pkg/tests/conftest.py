import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_criteria = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by this test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    n, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    _criteria.append((n, title, call.excinfo is None, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, ok, detail in sorted(_criteria):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title}"
        terminalreporter.write_line(line + (f" | {detail}" if detail else ""))
