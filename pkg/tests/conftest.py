import numpy as np
import pytest

from dronerelay import padd
from dronerelay.model import SystemConfig, Topology, check_feasibility

# every evaluation made anywhere in the suite is checked for feasibility
FEASIBILITY = {"checked": 0, "failed": []}
CRITERIA = {}


def _checked(evaluate):
    def wrapper(*args, **kwargs):
        ev = evaluate(*args, **kwargs)
        cfg = args[2] if len(args) > 2 else kwargs["cfg"]
        rep = check_feasibility(ev.state, ev.budget, cfg)
        FEASIBILITY["checked"] += 1
        if not rep:
            FEASIBILITY["failed"].append(rep.summary())
        return ev
    wrapper.__wrapped__ = evaluate
    return wrapper


def pytest_configure(config):
    padd.evaluate = _checked(padd.evaluate)


def pytest_terminal_summary(terminalreporter):
    tr = terminalreporter
    tr.write_sep("-", f"feasibility: {FEASIBILITY['checked']} evaluations checked, "
                      f"{len(FEASIBILITY['failed'])} failed")
    if CRITERIA:
        tr.write_sep("-", "acceptance criteria")
        for n in sorted(CRITERIA):
            ok, detail = CRITERIA[n]
            tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    def _record(n, ok, detail=""):
        CRITERIA[n] = (bool(ok), detail)
        return bool(ok)
    return _record


@pytest.fixture
def cfg():
    return SystemConfig()


@pytest.fixture
def small_topology():
    rng = np.random.default_rng(7)
    area = (1500.0, 1000.0)
    gbs = np.array([[300.0, 500.0], [1200.0, 500.0]])
    users = rng.uniform(0, 1, (25, 2)) * area
    drones = np.array([[700.0, 300.0, 120.0], [900.0, 700.0, 150.0]])
    return Topology(gbs, 1e9, users, drones, area)
