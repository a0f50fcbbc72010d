#!/usr/bin/env python3
"""Smoke test for the sdlab_py extension module.

Build the module first (either profile works):

    cargo build -p sdlab-py --release

then run this script; it locates the cdylib under target/, copies it next to
itself as an importable module, and exercises the main surface.
"""

import math
import pathlib
import random
import shutil
import sys

HERE = pathlib.Path(__file__).resolve().parent
ROOT = HERE.parent


def locate_module() -> pathlib.Path:
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libsdlab_py.so", "sdlab_py.so", "libsdlab_py.dylib")
    ]
    for cand in candidates:
        if cand.exists():
            target = HERE / "sdlab_py.so"
            if not target.exists() or cand.stat().st_mtime > target.stat().st_mtime:
                shutil.copy2(cand, target)
            return target
    raise SystemExit(
        "sdlab_py cdylib not found; run `cargo build -p sdlab-py --release` first"
    )


locate_module()
sys.path.insert(0, str(HERE))
import sdlab_py  # noqa: E402


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main() -> None:
    rng = random.Random(7)

    # Haar round trip and energy conservation.
    x = [rng.uniform(-2, 2) for _ in range(2 * 8 * 8)]
    bands = sdlab_py.dwt2(x, 2, 8, 8)
    back = sdlab_py.idwt2(bands, 8, 4, 4)
    assert max(abs(p - q) for p, q in zip(x, back)) <= 1e-12
    assert close(sum(v * v for v in x), sum(v * v for v in bands), 1e-10)

    a, d = sdlab_py.dwt1([1.0, 1.0, 1.0, -1.0])
    assert close(a[0], math.sqrt(2.0), 1e-12) and close(d[0], 0.0, 1e-12)
    assert close(d[1], math.sqrt(2.0), 1e-12)
    sig = [rng.uniform(-1, 1) for _ in range(16)]
    a, d = sdlab_py.dwt1(sig)
    rec = sdlab_py.idwt1(a, d)
    assert max(abs(p - q) for p, q in zip(sig, rec)) <= 1e-12

    # DFT magnitudes: Parseval in the unnormalized convention.
    img = [rng.uniform(-1, 1) for _ in range(8 * 8)]
    mags = sdlab_py.dft2_magnitudes(img, 8, 8)
    assert close(
        sum(v * v for v in img), sum(m * m for m in mags) / 64.0, 1e-9 * 64
    )

    # Radial profile partitions all non-DC cells.
    centers, means, counts = sdlab_py.radial_profile(mags, 8, 8, 4)
    assert sum(counts) == 63 and len(centers) == 4 and all(m >= 0 for m in means)

    # Power-law field: zero mean, unit variance by construction.
    field = sdlab_py.sample_power_law_field(1.0, 2.0, 16, 16, 3)
    n = len(field)
    assert abs(sum(field) / n) < 1e-10
    assert close(sum(v * v for v in field) / n, 1.0, 1e-10)

    # Schedule: terminal signal retention of the default recipe.
    sched = sdlab_py.Schedule(1000, 1e-4, 0.02)
    ab = sched.alpha_bar(1000)
    assert abs(ab - 4.0e-5) / 4.0e-5 < 0.05
    xt = sched.forward_diffuse([1.0, -1.0], 500, [0.5, 0.5])
    ab500 = sched.alpha_bar(500)
    expect = math.sqrt(ab500) * 1.0 + math.sqrt(1 - ab500) * 0.5
    assert close(xt[0], expect, 1e-12)

    # Optimal linear filter: the worked closed-form value.
    (resp,) = sdlab_py.wiener_response(1.0, 2.0, 0.5, [2.0])
    assert close(resp, 1.6, 1e-12)
    recon = sdlab_py.reconstruction_response(1.0, 2.0, 0.99, [0.5, 4.0], "caption")
    assert recon[0] > recon[1] - 1e-12 and all(v <= 1.0 + 1e-12 for v in recon)

    # Least-squares oracle agrees with the closed form mid-band.
    freqs, fitted, closed = sdlab_py.fit_wiener_oracle(1.0, 2.0, 0.5, 16, 8, 800, 11)
    mid = range(2, 6)
    worst = max(abs(fitted[k] - closed[k]) / closed[k] for k in mid)
    assert worst < 0.05, f"oracle disagreement {worst}"

    # freq_error of a batch against itself vanishes.
    batch = [sdlab_py.sample_power_law_field(1.0, 2.0, 16, 16, s) for s in range(6)]
    low, high = sdlab_py.freq_error(
        batch, batch, 16, 16, sdlab_py.scaled_cutoff(16, 16), 8
    )
    assert low == 0.0 and high == 0.0

    # Models: zero-initialized output heads predict zero noise.
    mlp = sdlab_py.PyModel('{"kind":"mlp","data_dim":16,"hidden":8,"temb_dim":4}', 5)
    out = mlp.predict([0.3] * 16, 10)
    assert out == [0.0] * 16
    assert mlp.param_count() == (16 + 4) * 8 + 8 + 8 * 16 + 16

    unet = sdlab_py.PyModel(
        '{"kind":"wg_unet","in_channels":1,"image_hw":8,"widths":[2,4],'
        '"temb_dim":4,"n_classes":null,"plain_resample":false}',
        5,
    )
    assert unet.data_shape() == [1, 8, 8]
    pred = unet.predict([0.1] * 64, 3)
    assert len(pred) == 64

    # A short training run moves the loss down, and sampling stays finite.
    signals = [
        [math.cos(3 * 2 * math.pi * i / 16) for i in range(16)],
        [math.cos(5 * 2 * math.pi * i / 16) for i in range(16)],
    ]
    losses = sdlab_py.train_mlp_quick(signals, 16, 32, 120, 1e-3, 9)
    assert sum(losses[-20:]) / 20 < sum(losses[:20]) / 20
    small_sched = sdlab_py.Schedule(50, 1e-4, 0.02)
    samples = mlp.sample(small_sched, 4, 1, "ddim", 10)
    assert len(samples) == 4 and all(math.isfinite(v) for row in samples for v in row)

    print("sdlab_py smoke test: OK")


if __name__ == "__main__":
    main()
