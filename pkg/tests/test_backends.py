import json
import sys

import numpy as np
import pytest
from oracles import random_mask, shift_oracle

from refvos.backends import (
    BackendDescriptor,
    PropagationRequest,
    SegmenterOutput,
    run_propagator,
    run_segmenter,
    shift_mask,
)
from refvos.dataset import ExpressionRecord, ResultsLayout, VideoRecord, write_mask_png
from refvos.errors import BackendError, ConfigError, InputError, ProtocolError
from refvos.masks import BinaryMask, ConfidenceSeries, MaskSequence

IDS = ("00000", "00005", "00010", "00015", "00020")
VIDEO = VideoRecord("v", IDS[:3], (ExpressionRecord("0", "the dog", "1"),))


def two_by_two(h=4, w=6, top=1, left=2):
    a = np.zeros((h, w), dtype=bool)
    a[top : top + 2, left : left + 2] = True
    return BinaryMask(a)


# Expected frames for a 2x2 square at cols 2-3 moving right one pixel per frame
# on a 4x6 grid; written out by hand.
TRANSLATED = [
    [[0, 0, 0, 0, 0, 0], [0, 0, 1, 1, 0, 0], [0, 0, 1, 1, 0, 0], [0, 0, 0, 0, 0, 0]],
    [[0, 0, 0, 0, 0, 0], [0, 0, 0, 1, 1, 0], [0, 0, 0, 1, 1, 0], [0, 0, 0, 0, 0, 0]],
    [[0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 1, 1], [0, 0, 0, 0, 1, 1], [0, 0, 0, 0, 0, 0]],
    [[0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 1], [0, 0, 0, 0, 0, 1], [0, 0, 0, 0, 0, 0]],
    [[0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0]],
]


def test_descriptor_validation(tmp_path):
    with pytest.raises(ConfigError):
        BackendDescriptor("magic")
    with pytest.raises(ConfigError):
        BackendDescriptor("external-process", command_template="  ")
    d = BackendDescriptor.from_dict({"kind": "oracle", "parameters": {"masks_root": "gt"}}, tmp_path)
    assert d.parameters["masks_root"] == str((tmp_path / "gt").resolve())
    with pytest.raises(ConfigError):
        BackendDescriptor.from_dict({"kind": "identity", "bogus": 1})


def test_request_validation():
    with pytest.raises(InputError):
        PropagationRequest(two_by_two(), 5, IDS)
    with pytest.raises(ProtocolError):
        SegmenterOutput(MaskSequence.broadcast(two_by_two(), IDS), ConfidenceSeries([0.5]))


def test_identity_propagator():
    key = two_by_two()
    out = run_propagator(BackendDescriptor("identity"), PropagationRequest(key, 2, IDS), None)
    assert out.frame_ids == IDS and all(f == key for f in out.frames)
    empty = BinaryMask.zeros(4, 6)
    out = run_propagator(BackendDescriptor("identity"), PropagationRequest(empty, 0, IDS), None)
    assert all(f == empty for f in out.frames)


def test_translation_matches_hand_shifted_masks():
    b = BackendDescriptor("translation", parameters={"dx": 1, "dy": 0})
    out = run_propagator(b, PropagationRequest(two_by_two(), 0, IDS), None)
    assert [f.bits.astype(int).tolist() for f in out.frames] == TRANSLATED


def test_translation_backward_pass():
    # keyframe in the middle: earlier frames move left of the key position
    b = BackendDescriptor("translation", parameters={"dx": 1, "dy": 0})
    key = BinaryMask(np.array(TRANSLATED[2], dtype=bool))
    out = run_propagator(b, PropagationRequest(key, 2, IDS), None)
    assert [f.bits.astype(int).tolist() for f in out.frames[:3]] == TRANSLATED[:3]


def test_translation_matches_direct_shift_oracle(rng):
    for _ in range(50):
        h, w = int(rng.integers(3, 20)), int(rng.integers(3, 20))
        dx, dy = int(rng.integers(-3, 4)), int(rng.integers(-3, 4))
        key = random_mask(rng, h, w)
        k = int(rng.integers(0, len(IDS)))
        b = BackendDescriptor("translation", parameters={"dx": dx, "dy": dy})
        out = run_propagator(b, PropagationRequest(BinaryMask(key), k, IDS), None)
        for t, f in enumerate(out.frames):
            assert np.array_equal(f.bits, shift_oracle(key, (t - k) * dx, (t - k) * dy))


def test_translation_reversible_on_interior(rng):
    k = 2
    for _ in range(30):
        dx, dy = int(rng.integers(-2, 3)), int(rng.integers(-2, 3))
        a = np.zeros((24, 24), dtype=bool)
        a[8:16, 8:16] = random_mask(rng, 8, 8)
        fwd = run_propagator(
            BackendDescriptor("translation", parameters={"dx": dx, "dy": dy}),
            PropagationRequest(BinaryMask(a), 0, IDS),
            None,
        )
        back = run_propagator(
            BackendDescriptor("translation", parameters={"dx": -dx, "dy": -dy}),
            PropagationRequest(fwd.frames[k], k, IDS),
            None,
        )
        # k frames past the new key the reverse velocity has undone the motion
        assert back.frames[2 * k] == BinaryMask(a)


def test_shift_mask_out_of_range():
    m = BinaryMask.ones(3, 3)
    assert shift_mask(m, 5, 0) == BinaryMask.zeros(3, 3)
    assert shift_mask(m, 0, -3) == BinaryMask.zeros(3, 3)


def test_segmenter_kind_checks():
    with pytest.raises(ConfigError):
        run_segmenter(BackendDescriptor("identity"), VIDEO, VIDEO.expressions[0], None)
    with pytest.raises(ConfigError):
        run_propagator(BackendDescriptor("oracle"), PropagationRequest(two_by_two(), 0, IDS), None)


@pytest.fixture
def gt_root(tmp_path):
    layout = ResultsLayout(tmp_path / "gt")
    for i, fid in enumerate(VIDEO.frame_ids):
        write_mask_png(two_by_two(left=i), layout.mask_path("v", "0", fid))
    return layout


def test_oracle_segmenter_returns_ground_truth(gt_root):
    b = BackendDescriptor("oracle", parameters={"masks_root": str(gt_root.root)})
    out = run_segmenter(b, VIDEO, VIDEO.expressions[0], None)
    assert out.masks == gt_root.read_sequence("v", "0", VIDEO.frame_ids)
    assert out.confidences.scores == (1.0, 1.0, 1.0)


def test_oracle_segmenter_scores_pass_through(gt_root):
    (gt_root.sequence_dir("v", "0") / "scores.json").write_text(json.dumps([0.1, 0.8, 0.3]))
    b = BackendDescriptor("oracle", parameters={"masks_root": str(gt_root.root)})
    assert run_segmenter(b, VIDEO, VIDEO.expressions[0], None).confidences.scores == (0.1, 0.8, 0.3)


def test_oracle_missing_mask(gt_root):
    gt_root.mask_path("v", "0", "00005").unlink()
    b = BackendDescriptor("oracle", parameters={"masks_root": str(gt_root.root)})
    with pytest.raises(ProtocolError, match="00005"):
        run_segmenter(b, VIDEO, VIDEO.expressions[0], None)


# -- external process -------------------------------------------------------


def test_external_identity_stub_matches_builtin(identity_stub, rng):
    ext = BackendDescriptor("external-process", command_template=identity_stub, timeout=60)
    for k in (0, 2, 4):
        key = BinaryMask(random_mask(rng, 9, 7))
        req = PropagationRequest(key, k, IDS, "v", "the dog")
        got = run_propagator(ext, req, None)
        assert got == run_propagator(BackendDescriptor("identity"), req, None)
        assert got.frames[k] == key


def test_external_sees_request_and_frames(tmp_path):
    frames = tmp_path / "frames"
    frames.mkdir()
    for fid in IDS[:3]:
        (frames / f"{fid}.jpg").write_bytes(b"jpeg-bytes")
    script = tmp_path / "inspect.py"
    script.write_text(
        "import json, shutil, sys, pathlib\n"
        "req, resp = map(pathlib.Path, sys.argv[1:3])\n"
        "r = json.loads((req / 'request.json').read_text())\n"
        "assert r == {'video_id': 'v', 'expression': 'the dog', 'frame_ids': ['00000', '00005', '00010'], 'key_index': 1}, r\n"
        "assert sorted(p.name for p in req.iterdir()) == ['00000.jpg', '00005.jpg', '00010.jpg', 'key.png', 'request.json']\n"
        "for f in r['frame_ids']: shutil.copyfile(req / 'key.png', resp / (f + '.png'))\n"
    )
    b = BackendDescriptor("external-process", command_template=f"{sys.executable} {script} {{request_dir}} {{response_dir}}")
    out = run_propagator(b, PropagationRequest(two_by_two(), 1, IDS[:3], "v", "the dog"), frames)
    assert len(out) == 3


def test_external_clean_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("REFVOS_SHOULD_NOT_LEAK", "1")
    script = tmp_path / "env.py"
    script.write_text(
        "import os, sys, json, shutil, pathlib\n"
        "assert 'REFVOS_SHOULD_NOT_LEAK' not in os.environ\n"
        "assert os.environ['MODEL_DEVICE'] == 'cpu'\n"
        "req, resp = map(pathlib.Path, sys.argv[1:3])\n"
        "for f in json.loads((req / 'request.json').read_text())['frame_ids']:\n"
        "    shutil.copyfile(req / 'key.png', resp / (f + '.png'))\n"
    )
    b = BackendDescriptor(
        "external-process",
        command_template=f"{sys.executable} {script} {{request_dir}} {{response_dir}}",
        env={"MODEL_DEVICE": "cpu"},
    )
    run_propagator(b, PropagationRequest(two_by_two(), 0, IDS), None)


def test_external_segmenter(tmp_path, segmenter_stub):
    mask_png = tmp_path / "m.png"
    write_mask_png(two_by_two(), mask_png)
    b = BackendDescriptor("external-process", command_template=segmenter_stub(mask_png))
    out = run_segmenter(b, VIDEO, VIDEO.expressions[0], None)
    assert all(f == two_by_two() for f in out.masks.frames)
    assert out.confidences.scores == (0.5, 0.5, 0.5)


def test_external_segmenter_missing_frame(tmp_path, segmenter_stub):
    mask_png = tmp_path / "m.png"
    write_mask_png(two_by_two(), mask_png)
    b = BackendDescriptor("external-process", command_template=segmenter_stub(mask_png, skip="00010"))
    with pytest.raises(ProtocolError, match="00010"):
        run_segmenter(b, VIDEO, VIDEO.expressions[0], None)


def _script_backend(tmp_path, body, timeout=60.0):
    script = tmp_path / "s.py"
    script.write_text(body)
    return BackendDescriptor(
        "external-process", command_template=f"{sys.executable} {script} {{request_dir}} {{response_dir}}", timeout=timeout
    )


def test_external_nonzero_exit_captures_stderr(tmp_path):
    b = _script_backend(tmp_path, "import sys\nsys.stderr.write('CUDA out of memory')\nsys.exit(3)\n")
    with pytest.raises(BackendError, match="status 3") as ei:
        run_propagator(b, PropagationRequest(two_by_two(), 0, IDS), None)
    assert "CUDA out of memory" in ei.value.diagnostics


def test_external_timeout(tmp_path):
    b = _script_backend(tmp_path, "import time\ntime.sleep(30)\n", timeout=0.5)
    with pytest.raises(BackendError, match="timed out"):
        run_propagator(b, PropagationRequest(two_by_two(), 0, IDS), None)


def test_external_missing_program():
    b = BackendDescriptor("external-process", command_template="/nonexistent/aot {request_dir} {response_dir}")
    with pytest.raises(BackendError):
        run_propagator(b, PropagationRequest(two_by_two(), 0, IDS), None)


def test_propagator_violating_keyframe_fixpoint(tmp_path):
    # writes an empty mask everywhere, so the key frame no longer matches
    body = (
        "import json, sys, pathlib\n"
        "from PIL import Image\n"
        "req, resp = map(pathlib.Path, sys.argv[1:3])\n"
        "r = json.loads((req / 'request.json').read_text())\n"
        "for f in r['frame_ids']: Image.new('L', (6, 4)).save(resp / (f + '.png'))\n"
    )
    b = _script_backend(tmp_path, body)
    with pytest.raises(ProtocolError, match="key"):
        run_propagator(b, PropagationRequest(two_by_two(), 0, IDS), None)


def test_segmenter_bad_scores(tmp_path):
    body = (
        "import json, sys, pathlib\n"
        "from PIL import Image\n"
        "req, resp = map(pathlib.Path, sys.argv[1:3])\n"
        "r = json.loads((req / 'request.json').read_text())\n"
        "for f in r['frame_ids']: Image.new('L', (6, 4)).save(resp / (f + '.png'))\n"
        "(resp / 'scores.json').write_text(json.dumps([0.5, 1.5, 0.2]))\n"
    )
    with pytest.raises(ProtocolError, match="outside"):
        run_segmenter(_script_backend(tmp_path, body), VIDEO, VIDEO.expressions[0], None)
