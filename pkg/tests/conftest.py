import stat
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest

from flowforge.core import DepthMap, FlowField, ImageBuffer
from flowforge import formats


def random_raster_instance(rng, max_size=8, channels=None, flow_scale=3.0, depth_scale=5.0):
    """One random (src, flow, depth) triple within the oracle-test envelope."""
    h = int(rng.integers(2, max_size + 1))
    w = int(rng.integers(2, max_size + 1))
    c = int(channels if channels is not None else rng.choice((1, 3)))
    src = rng.random((h, w, c)).astype(np.float32)
    flow = rng.uniform(-flow_scale, flow_scale, (h, w, 2)).astype(np.float32)
    depth = rng.uniform(-depth_scale, depth_scale, (h, w)).astype(np.float32)
    return ImageBuffer(src), FlowField(flow), DepthMap(depth)


def collision_instance(rng, max_size=6):
    """Instance engineered for depth ties and landing collisions."""
    h = int(rng.integers(2, max_size + 1))
    w = int(rng.integers(2, max_size + 1))
    src = rng.random((h, w, 1)).astype(np.float32)
    # half-pixel flow grid forces many-on-one landings
    flow = (np.round(rng.uniform(-2, 2, (h, w, 2)) * 2.0) / 2.0).astype(np.float32)
    # coarse depth values force exact ties
    depth = rng.integers(0, 3, (h, w)).astype(np.float32)
    return ImageBuffer(src), FlowField(flow), DepthMap(depth)


@pytest.fixture
def moving_square():
    """20x20 analytic scene: 6x6 bright square over a dark background,
    square moves +3 px in x, background static, square closer to camera."""
    h = w = 20
    r0, c0 = 7, 5
    size, shift = 6, 3

    img1 = np.full((h, w, 1), 0.25, dtype=np.float32)
    img1[r0:r0 + size, c0:c0 + size] = 0.75
    img2 = np.full((h, w, 1), 0.25, dtype=np.float32)
    img2[r0:r0 + size, c0 + shift:c0 + shift + size] = 0.75

    flow_fwd = np.zeros((h, w, 2), dtype=np.float32)
    flow_fwd[r0:r0 + size, c0:c0 + size, 0] = shift
    flow_bwd = np.zeros((h, w, 2), dtype=np.float32)
    flow_bwd[r0:r0 + size, c0 + shift:c0 + shift + size, 0] = -shift

    depth1 = np.zeros((h, w), dtype=np.float32)
    depth1[r0:r0 + size, c0:c0 + size] = 20.0
    depth2 = np.zeros((h, w), dtype=np.float32)
    depth2[r0:r0 + size, c0 + shift:c0 + shift + size] = 20.0

    return {
        "i1": ImageBuffer(img1),
        "i2": ImageBuffer(img2),
        "f12": FlowField(flow_fwd),
        "f21": FlowField(flow_bwd),
        "d1": DepthMap(depth1),
        "d2": DepthMap(depth2),
        "square": (r0, c0, size, shift),
    }


# --- stub external commands for the loop tests ------------------------------

_STUB_COMMON = """
import struct, sys

def png_size(path):
    with open(path, 'rb') as f:
        head = f.read(26)
    if head[:8] != b'\\x89PNG\\r\\n\\x1a\\n':
        sys.exit(3)
    w, h = struct.unpack('>II', head[16:24])
    return w, h

def log(tag):
    with open(__file__ + '.log', 'a') as f:
        f.write(tag + '\\n')
"""

_STUB_FLOW = _STUB_COMMON + """
img1, img2, out = sys.argv[1], sys.argv[2], sys.argv[3]
log('flow ' + out)
w, h = png_size(img1)
with open(out, 'wb') as f:
    f.write(struct.pack('<f', 202021.25))
    f.write(struct.pack('<ii', w, h))
    f.write(b'\\x00' * (w * h * 8))
"""

_STUB_FLOW_FAIL_ON = _STUB_COMMON + """
img1, img2, out = sys.argv[1], sys.argv[2], sys.argv[3]
if '{needle}' in img1:
    sys.stderr.write('refusing ' + img1 + '\\n')
    sys.exit(1)
log('flow ' + out)
w, h = png_size(img1)
with open(out, 'wb') as f:
    f.write(struct.pack('<f', 202021.25))
    f.write(struct.pack('<ii', w, h))
    f.write(b'\\x00' * (w * h * 8))
"""

_STUB_DEPTH = _STUB_COMMON + """
img, out = sys.argv[1], sys.argv[2]
log('depth ' + out)
w, h = png_size(img)
with open(out, 'wb') as f:
    f.write(b'Pf\\n')
    f.write(f'{w} {h}\\n'.encode())
    f.write(b'-1.0\\n')
    f.write(struct.pack('<f', 1.0) * (w * h))
"""

_STUB_TRAINER = _STUB_COMMON + """
import os
manifest, init_ckpt, out_ckpt = sys.argv[1], sys.argv[2], sys.argv[3]
log('train ' + out_ckpt)
payload = b'init'
if os.path.isfile(init_ckpt):
    with open(init_ckpt, 'rb') as f:
        payload = f.read()
with open(out_ckpt, 'wb') as f:
    f.write(payload + b'|' + manifest.encode())
"""

_STUB_TRAINER_FAIL_ONCE = _STUB_COMMON + """
import os
manifest, init_ckpt, out_ckpt = sys.argv[1], sys.argv[2], sys.argv[3]
marker = __file__ + '.failed'
if not os.path.exists(marker) and '{needle}' in out_ckpt:
    open(marker, 'w').write('x')
    sys.stderr.write('simulated crash\\n')
    sys.exit(1)
log('train ' + out_ckpt)
payload = b'init'
if os.path.isfile(init_ckpt):
    with open(init_ckpt, 'rb') as f:
        payload = f.read()
with open(out_ckpt, 'wb') as f:
    f.write(payload + b'|' + manifest.encode())
"""


class StubKit:
    """Writes the stub estimator/trainer scripts and builds command templates."""

    def __init__(self, root: Path):
        self.root = root
        root.mkdir(parents=True, exist_ok=True)

    def _write(self, name: str, body: str) -> Path:
        path = self.root / name
        path.write_text(textwrap.dedent(body))
        path.chmod(path.stat().st_mode | stat.S_IXUSR)
        return path

    def _template(self, script: Path, *placeholders: str) -> str:
        return " ".join([sys.executable, str(script), *placeholders])

    def flow_cmd(self) -> str:
        script = self._write("stub_flow.py", _STUB_FLOW)
        return self._template(script, "{img1}", "{img2}", "{out_flow}")

    def flow_cmd_failing_on(self, needle: str) -> str:
        script = self._write("stub_flow_fail.py", _STUB_FLOW_FAIL_ON.replace("{needle}", needle))
        return self._template(script, "{img1}", "{img2}", "{out_flow}")

    def depth_cmd(self) -> str:
        script = self._write("stub_depth.py", _STUB_DEPTH)
        return self._template(script, "{img}", "{out_pfm}")

    def trainer_cmd(self) -> str:
        script = self._write("stub_trainer.py", _STUB_TRAINER)
        return self._template(script, "{manifest}", "{init_ckpt}", "{out_ckpt}")

    def trainer_cmd_fail_once(self, needle: str) -> str:
        script = self._write("stub_trainer_fail.py",
                             _STUB_TRAINER_FAIL_ONCE.replace("{needle}", needle))
        return self._template(script, "{manifest}", "{init_ckpt}", "{out_ckpt}")

    def invocations(self, script_name: str, tag: str) -> int:
        log = self.root / (script_name + ".log")
        if not log.is_file():
            return 0
        return sum(1 for line in log.read_text().splitlines() if line.startswith(tag))


@pytest.fixture
def stubs(tmp_path):
    return StubKit(tmp_path / "stubs")


@pytest.fixture
def tiny_corpus(tmp_path):
    """Two-pair corpus of small random PNG frame pairs plus its listing file."""
    rng = np.random.default_rng(7)
    corpus_dir = tmp_path / "corpus"
    corpus_dir.mkdir()
    lines = []
    for i in range(2):
        img = rng.random((12, 16, 3)).astype(np.float32)
        formats.write_image(ImageBuffer(img), corpus_dir / f"v{i}_f0.png")
        formats.write_image(ImageBuffer(np.clip(img + 0.01, 0, 1)), corpus_dir / f"v{i}_f1.png")
        lines.append(f"v{i}_f0.png\tv{i}_f1.png\tvideo{i}\t{i * 10}")
    listing = corpus_dir / "pairs.tsv"
    listing.write_text("\n".join(lines) + "\n")
    return listing
