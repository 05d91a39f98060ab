"""Smoke test for the Python bindings.

Imports `gated_reid_py` when installed (e.g. `maturin develop` in
crates/python); otherwise loads the shared library from a cargo build:

    cargo build -p gated-reid-py --release
    python3 python/smoke_test.py
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    try:
        import gated_reid_py

        return gated_reid_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libgated_reid_py.so"
        if lib.exists():
            tmp = pathlib.Path(tempfile.mkdtemp()) / "gated_reid_py.so"
            shutil.copy(lib, tmp)
            loader_spec = importlib.util.spec_from_file_location("gated_reid_py", tmp)
            module = importlib.util.module_from_spec(loader_spec)
            loader_spec.loader.exec_module(module)
            return module
    sys.exit("gated_reid_py not found; run `cargo build -p gated-reid-py` first")


LEAN = {
    "net.height": "28",
    "net.width": "12",
    "net.conv1_out": "8",
    "net.conv1_of_out": "8",
    "net.gate_hidden": "16",
    "net.state_dim": "32",
    "net.feature_dim": "32",
    "net.conv2_out": "12",
    "net.conv3_out": "16",
    "net.kernel_size": "3",
    "train.crop_height": "28",
    "train.crop_width": "12",
    "train.subseq_len": "8",
    "train.epochs": "2",
    "data.num_identities": "6",
    "data.height": "32",
    "data.width": "16",
    "data.min_frames": "12",
    "data.max_frames": "20",
}


def main():
    g = load_module()

    assert g.fuse([1.0, 0.5], [0.0, 0.5], "f4") == [1.0, 0.75]
    assert g.fuse([0.3], [0.6], "f3") == g.fuse([0.3], [0.6], "f4")
    assert g.verification([0.0, 0.0], [0.6, 0.8], False, 2.0) == 0.5
    assert g.regularizer([0.25] * 8) == 0.1875
    assert abs(g.identification([1.0, 2.0], [[0.0, 0.0]] * 5, 0) - math.log(5)) < 1e-12
    assert g.cmc([[0.1, 0.9], [0.4, 0.3]], [0, 1], [0, 1]) == [100.0, 100.0]

    cfg = g.Config()
    for k, v in LEAN.items():
        cfg.set(k, v)
    cfg.validate()
    assert cfg.get("net.fusion") == "f4"
    try:
        cfg.set("no.such_key", "1")
        raise AssertionError("unknown key accepted")
    except ValueError:
        pass

    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        assert g.generate(cfg, str(tmp / "data")) == 12
        log = g.train(cfg, str(tmp / "data"), str(tmp / "ckpt"))
        assert log.splitlines()[0].startswith("epoch\tbatch")
        ranks = g.evaluate(str(tmp / "ckpt"), str(tmp / "data"))
        assert ranks == sorted(ranks) and ranks[-1] == 100.0

        model = g.Model.load(str(tmp / "ckpt"))
        h, w = model.input_shape
        t = 3
        frames = [0.5] * (t * h * w * 3)
        flow = [0.0] * (t * h * w * 2)
        feature, gates = model.infer(frames, flow)
        assert len(feature) == model.feature_dim
        assert len(gates) == t and all(0.0 <= x <= 1.0 for x in gates)
        assert model.infer(frames, flow) == (feature, gates)

    report = g.gradcheck(seed=0, max_coords=5)
    worst = max(report.values())
    assert worst < 1e-4, report
    print(f"ok: {len(report)} gradient checks, worst relative error {worst:.2e}, rank-1 {ranks[0]:.1f}")


if __name__ == "__main__":
    main()
