import os
import sys
from collections import OrderedDict

import pytest
import torch

sys.path.insert(0, os.path.dirname(__file__))  # make ``oracles`` importable

torch.set_num_threads(1)

_CRITERIA: "OrderedDict[int, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion this test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            n, title = m.args
            _CRITERIA.setdefault(n, {"title": title, "outcomes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    entry = _CRITERIA[m.args[0]]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry["outcomes"].append((item.name, rep.outcome, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        outs = e["outcomes"]
        if not outs:
            status = "NOT RUN"
        elif all(o == "passed" for _, o, _ in outs):
            status = "PASS"
        elif any(o == "failed" for _, o, _ in outs):
            status = "FAIL"
        else:
            status = "SKIP"
        secs = sum(d for _, _, d in outs)
        failed = [name for name, o, _ in outs if o == "failed"]
        extra = f"  failing: {', '.join(failed)}" if failed else ""
        tr.write_line(f"criterion {n:2d} {status:7s} {e['title']} ({len(outs)} tests, {secs:.1f}s){extra}")
