"""Smoke test for the pycinerecon extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml --release`
or copy the built `libpycinerecon.so` next to this file as `pycinerecon.so`.
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent))
import pycinerecon as cr  # noqa: E402


def main() -> None:
    rng = np.random.default_rng(0)

    one = np.ones((1, 4, 4), dtype=np.complex128)
    k = cr.fft2c(one)
    assert np.isclose(k[0, 2, 2], 4.0) and np.isclose(np.abs(k).sum(), 4.0)
    x = rng.standard_normal((2, 8, 8)) + 1j * rng.standard_normal((2, 8, 8))
    assert np.allclose(cr.ifft2c(cr.fft2c(x)), x)

    mask = cr.SamplingMask(16, 4, 0, seed=0)
    assert mask.sampled_count() == 4
    lines = mask.lines
    assert lines.dtype == bool and lines.shape == (16,)

    img = cr.phantom(frames=6, height=32, width=48, seed=3)
    m8 = cr.SamplingMask(48, 8, 6, seed=1)
    y = cr.forward_operator(img, m8)
    assert np.all(y[:, :, ~m8.lines] == 0)
    zf = cr.adjoint_operator(y, m8)
    hard = cr.data_consistency(zf, y, m8, 30.0)
    assert np.allclose(cr.fft2c(hard)[:, :, m8.lines], y[:, :, m8.lines], atol=1e-6)

    scores = json.loads(cr.challenge_eval(zf, img))
    assert scores["challenge_crop"]["n_frames_evaluated"] == 3
    assert 0.0 < scores["full_image"]["ssim"] < 1.0
    mag = np.abs(img[0])
    assert cr.ssim(mag, mag) == 1.0 and cr.nmse(mag, mag) == 0.0
    assert cr.perp_loss(img, img) == 0.0 and cr.l1_split_loss(img, img) == 0.0

    shared = cr.Model.crnn(json.dumps({"cascades": 2, "channels": 4, "weight_sharing": True}))
    plain = cr.Model.crnn(json.dumps({"cascades": 2, "channels": 4}))
    assert shared.param_count() < plain.param_count()
    out = plain.reconstruct(y, m8)
    assert out.shape == img.shape and out.dtype == np.complex128

    with tempfile.TemporaryDirectory() as root:
        sets = [f'paths.data_dir="{root}/data"', "data.n_slices=4", "data.split=[2, 1, 1]"]
        manifest = json.loads(cr.run("gen-data", None, sets))
        assert manifest["slices"] == 4
        try:
            cr.run("eval", None, sets + [f'paths.checkpoint_dir="{root}/none"'])
        except ValueError as e:
            assert str(e).startswith("missing_data"), e
        else:
            raise AssertionError("eval without a checkpoint should fail")

    print("pycinerecon smoke test passed")


if __name__ == "__main__":
    main()
