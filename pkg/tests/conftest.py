import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from transona.config import load_config  # noqa: E402
from transona.pipeline import run_pipeline  # noqa: E402
from transona.synth import SynthParams, config_text, synth_generate  # noqa: E402

SYNTH_SEED = 7


def make_classroom(directory, seed=SYNTH_SEED, replicates=200, out="out", extra="", **params):
    p = SynthParams(seed=seed, **params)
    data = synth_generate(p)
    data.write(directory)
    cfg = Path(directory) / "config.toml"
    cfg.write_text(config_text(seed, out, replicates, p.align_range_mm, extra))
    return data, cfg


@pytest.fixture(scope="session")
def classroom(tmp_path_factory):
    """A synthetic classroom plus one completed pipeline run over it."""
    d = tmp_path_factory.mktemp("classroom")
    data, cfg = make_classroom(d)
    result = run_pipeline(load_config(cfg))
    return {"dir": d, "data": data, "config": cfg, "result": result,
            "stats": json.loads((result.output_dir / "stats.json").read_text())}


@pytest.fixture
def fresh_classroom(tmp_path):
    data, cfg = make_classroom(tmp_path)
    return tmp_path, data, cfg


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the assertion still decides the test outcome."""
    def record(number, ok, detail):
        line = f"AC{number:>2} {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s[2:4])):
            terminalreporter.write_line(line)
