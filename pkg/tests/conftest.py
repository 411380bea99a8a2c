import json
import time
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from dynmtl.cli import cmd_train, load_bundle, load_config

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CONFIG = ROOT / "configs" / "default.json"


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory):
    """The default pipeline, trained once per session: (config, out dir, bundle, paths)."""
    out = tmp_path_factory.mktemp("default_run")
    cfg = load_config(DEFAULT_CONFIG)
    wall, cpu = time.perf_counter(), time.process_time()
    paths = cmd_train(cfg, out)
    paths["wall_seconds"] = time.perf_counter() - wall
    paths["cpu_seconds"] = time.process_time() - cpu
    return cfg, out, load_bundle(cfg, out), paths


def small_config_dict(seed: int = 3) -> dict:
    """A minutes-free configuration for CLI and determinism tests."""
    return {"seed": seed,
            "suite": {"n_train": 256, "n_val": 32, "n_test": 64},
            "anchor": {"width": 8, "n_layers": 2, "pretrain_steps": 30, "steps": 30,
                       "batch_size": 32},
            "train": {"edge_steps": 40, "weight_steps": 30, "batch_size": 16},
            "eval": {"probes": 16, "hv_prefs": 5}}


@pytest.fixture
def small_config_file(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(small_config_dict()))
    return path


ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
