import os
import re
import sys

sys.path.insert(0, os.path.dirname(__file__))

_items = {}
_lines = {}


def pytest_collection_modifyitems(items):
    for item in items:
        if item.get_closest_marker("criterion"):
            _items[item.nodeid] = item


def pytest_runtest_logreport(report):
    item = _items.get(report.nodeid)
    if item is None or (report.when != "call" and report.outcome == "passed"):
        return
    key, title = item.get_closest_marker("criterion").args
    status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
    if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
        title += f" [{report.longrepr[2].removeprefix('Skipped: ')}]"
    if _lines.get(key, ("PASS",))[0] == "PASS":
        _lines[key] = (status, title)


def _order(key):
    m = re.match(r"(\d+)(.*)", str(key))
    return int(m.group(1)), m.group(2)


def pytest_terminal_summary(terminalreporter):
    if _lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_lines, key=_order):
            status, title = _lines[key]
            terminalreporter.write_line(f"criterion {key:<3} {status}  {title}")
