import json
from pathlib import Path

import pytest

from parley.survey import load_survey
from parley.synth import bundled_example, default_plan, load_distribution, load_records

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "seen": False})
    if rep.when == "call" or rep.failed or rep.skipped:
        entry["seen"] = True
        if rep.failed or rep.skipped:
            entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        e = _criteria[number]
        status = "PASS" if e["ok"] and e["seen"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}  {e['title']}")


@pytest.fixture(scope="session")
def survey():
    return load_survey()


@pytest.fixture(scope="session")
def plan(survey):
    return default_plan(survey)


@pytest.fixture(scope="session")
def dist():
    return load_distribution(bundled_example("distributions"))


@pytest.fixture(scope="session")
def records(survey):
    return load_records(bundled_example("records"), survey)


def participants(n_native=5, n_non_native=3):
    out = []
    for i in range(n_native + n_non_native):
        out.append({
            "id": f"P{i + 1}",
            "phone_number": f"+1555000{i + 1:04d}",
            "group": "native" if i < n_native else "non_native",
        })
    return out


@pytest.fixture
def make_config(tmp_path):
    def make(name="camp", **overrides):
        doc = {"campaign_id": name, "runs_dir": "runs", "participants": participants()}
        doc.update(overrides)
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(doc))
        return path

    return make


def read_json(path: Path):
    return json.loads(Path(path).read_text())
