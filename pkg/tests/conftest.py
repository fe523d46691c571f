import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from refvos.masks import BinaryMask  # noqa: E402


def M(rows) -> BinaryMask:
    return BinaryMask(np.array(rows, dtype=np.uint8))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


IDENTITY_STUB = r'''
import json, shutil, sys
from pathlib import Path
req, resp = Path(sys.argv[1]), Path(sys.argv[2])
request = json.loads((req / "request.json").read_text())
for fid in request["frame_ids"]:
    shutil.copyfile(req / "key.png", resp / f"{fid}.png")
'''

SEGMENTER_STUB = r'''
import json, shutil, sys
from pathlib import Path
req, resp = Path(sys.argv[1]), Path(sys.argv[2])
request = json.loads((req / "request.json").read_text())
src = Path(sys.argv[3])
skip = sys.argv[4] if len(sys.argv) > 4 else None
for fid in request["frame_ids"]:
    if fid != skip:
        shutil.copyfile(src, resp / f"{fid}.png")
(resp / "scores.json").write_text(json.dumps([0.5] * len(request["frame_ids"])))
'''


@pytest.fixture
def identity_stub(tmp_path) -> str:
    """Command template of an external propagator that broadcasts key.png."""
    script = tmp_path / "identity_stub.py"
    script.write_text(IDENTITY_STUB)
    return f"{sys.executable} {script} {{request_dir}} {{response_dir}}"


@pytest.fixture
def segmenter_stub(tmp_path):
    script = tmp_path / "segmenter_stub.py"
    script.write_text(SEGMENTER_STUB)

    def template(mask_png: Path, skip: str | None = None) -> str:
        extra = f" {skip}" if skip else ""
        return f"{sys.executable} {script} {{request_dir}} {{response_dir}} {mask_png}{extra}"

    return template


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_RESULTS

    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
