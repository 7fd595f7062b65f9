"""Smoke test for the gaterace_py extension module.

Build and run from the repository root:

    cargo build --release -p gaterace-py --features extension-module
    cp target/release/libgaterace_py.so crates/py/python/gaterace_py.so
    python3 crates/py/python/smoke_test.py
"""

import json
import math

import gaterace_py as gr


def main():
    cfg = gr.Config()
    assert cfg.violations() == []
    again = gr.Config.from_toml(cfg.to_toml())
    assert again.seed == cfg.seed

    try:
        gr.Config.from_toml("[camera]\nfx = -1.0\n")
    except ValueError as e:
        assert "camera.fx" in str(e)
    else:
        raise AssertionError("invalid config accepted")

    frames = gr.render_corpus(3, cfg, seed=5)
    assert len(frames) == 3
    img, labels = frames[0]
    assert (img.width, img.height) == cfg.camera().size
    assert len(img.to_bytes()) == img.width * img.height * 3
    dets = gr.detect_gates(img, cfg)
    print(f"frame 0: {len(labels)} labelled gate(s), {len(dets)} detection(s)")
    for d in dets:
        assert 0.0 <= d.cf <= 1.0 and len(d.corners) == 4

    blank = gr.Image(160, 350)
    assert gr.detect_gates(blank) == []

    cam = gr.Camera()
    gate = gr.Gate((3.0, 0.0, -1.5), 0.0)
    # level camera at (0, 0, -1.5): camera axes are body right, down, forward
    pts = [cam.undistort(cam.project((c[1], c[2] + 1.5, c[0]))) for c in gate.corners]
    pos, resid = gr.ls_position(pts, gate, (0.0, 0.0, 0.0), cam)
    assert max(abs(p - q) for p, q in zip(pos, (0.0, 0.0, -1.5))) < 1e-9, pos
    pos, _ = gr.pnp_position(pts, gate, cam)
    assert max(abs(p - q) for p, q in zip(pos, (0.0, 0.0, -1.5))) < 1e-6, pos

    ekf = gr.Ekf((0.0, 0.0, -1.5), cfg)
    for _ in range(100):
        ekf.predict(0.01, (0.0, 0.0, 0.0), (0.0, 0.0, -gr.GRAVITY))
    ekf.update((0.1, 0.0, -1.5))
    cov = ekf.covariance
    assert len(cov) == 7 and all(abs(cov[i][j] - cov[j][i]) < 1e-12 for i in range(7) for j in range(7))

    xs, ys, feas = gr.feasibility(1.5, cfg)
    assert len(feas) == len(ys) and len(feas[0]) == len(xs)

    run = gr.run_race(cfg, seed=0)
    summary = json.loads(run.summary_json())
    print(f"race: completed={run.completed} gates={run.gates_passed} speed={run.avg_speed:.2f} m/s")
    assert summary["gates_passed"] == run.gates_passed
    assert run.csv().startswith("t,mode")
    assert math.isfinite(run.avg_speed)
    print("smoke test ok")


if __name__ == "__main__":
    main()
