"""Smoke test for the kgas extension module.

Build and install first:
    maturin build --release -m crates/py/Cargo.toml && pip install target/wheels/kgas-*.whl
"""

import json
import math
import sys
import tempfile

import kgas


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    # rotations
    r = kgas.Rotation.exp([0.1, -0.4, 0.3])
    back = kgas.Rotation.exp(r.log())
    assert r.angle_to(back) < 1e-12
    assert (r * r.inverse()).angle_to(kgas.Rotation.identity()) < 1e-12
    u, s, v = kgas.proper_svd([[1, 2, 0], [0, 1, 3], [2, 0, 1]])
    assert s[0] >= s[1] >= abs(s[2])
    try:
        kgas.Rotation([[1, 0, 0], [0, 1, 0], [0, 0, -1]])
    except ValueError:
        pass
    else:
        raise AssertionError("reflection accepted")

    # matrix Fisher
    zero = kgas.MatrixFisher([[0] * 3] * 3)
    assert zero.log_normalizer() == 0.0
    f = kgas.MatrixFisher([[25, 0, 0], [0, 5, 0], [0, 0, 1]])
    assert f.concentrations() == [6.0, 26.0, 30.0]
    mode = f.mode()
    assert mode.angle_to(kgas.Rotation.identity()) < 1e-12
    draws = f.sample(200, seed=3)
    assert len(draws) == 200
    assert all(f.density(d) <= f.density(mode) for d in draws)
    assert [d.matrix() for d in f.sample(5, seed=3)] == [d.matrix() for d in draws[:5]]

    # gaussians
    g = kgas.Gaussian([0, 0, 3], [0.2, 0.1, 0.05], 0.9, [1, 0.5, 0.2], rotation=r)
    c = g.clone_with_motion([1.0, 0.5, 0.5], mode, 7)
    assert c.rotation.angle_to(mode * g.rotation) == 0.0
    assert close(c.scale[1], 0.05)

    # rendering and metrics
    cam = kgas.Camera.look_at([0, 0, 0], [0, 0, 1], [0, -1, 0], 40.0, 32, 24)
    img = kgas.render_gaussians([g, c], cam)
    assert (img.width, img.height) == (32, 24)
    assert max(img.alpha()) > 0.5
    assert kgas.ssim(img, img) == 1.0
    assert math.isinf(kgas.psnr(img, img))
    assert kgas.s3im(img, img, seed=1) == 1.0

    # deformation detection
    flat = [[x * 0.1, y * 0.1, 0.0] for x in range(12) for y in range(12)]
    assert kgas.detect(flat, k=8) == []

    # end to end
    with tempfile.TemporaryDirectory() as tmp:
        manifest = json.loads(kgas.run_scene("arm2", tmp, iterations=2))
        reduction = float(manifest["summary"]["relative_reduction"])
        assert reduction >= 0.2, reduction
        ref = kgas.Image.load(f"{tmp}/reference.ppm")
        assert len(ref.rgb()) == ref.width * ref.height > 0
    print(f"kgas smoke test ok (arm2 reduction {reduction:.4f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
