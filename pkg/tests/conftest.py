import importlib.resources
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
SCENARIO_DIR = REPO_ROOT / "scenarios"


def reference_catalog_text() -> str:
    return importlib.resources.files("slicesim.data").joinpath("reference.cat").read_text()


def scenario_path(name: str) -> Path:
    return SCENARIO_DIR / name


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    outcome = "PASS" if report.passed else "FAIL"
    print(f"\nACCEPTANCE {outcome}: {name}", flush=True)
