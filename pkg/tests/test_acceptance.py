"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete. Tolerances are pinned here and nowhere else.
"""

import time

import numpy as np
import pytest

import oracles
from bodycomp import phantom
from bodycomp.cli import main
from bodycomp.metrics import sample_slices, score
from bodycomp.mhd import read_mhd, read_mhd_labels, write_mhd
from bodycomp.morphology import (
    Connectivity,
    binary_close,
    binary_open,
    dilate,
    edt_sq,
    erode,
    fill_holes,
    hysteresis,
)
from bodycomp.pipeline import run_pipeline
from bodycomp.volume import BinaryMask, CtVolume, LabelMap

SPACINGS = [(1.0, 1.0, 1.0), (0.98, 0.98, 2.0), (0.7, 0.7, 3.0)]
RADII = [1.0, 2.0, 4.0, 5.0, 16.0]


def _report(name: str, ok: bool, detail: str = "") -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, f"{name} {detail}"


def _mask(data, spacing):
    return BinaryMask(data, spacing)


def test_morphology_oracle_suite():
    """erode/dilate/open/close match the SE-sweep oracle voxel-exactly on
    100 random 24^3 masks x radii {1,2,4,5,16} mm x three spacings, and the
    EDT matches the all-pairs oracle on <=16^3 masks, in under 60 s."""
    rng = np.random.default_rng(2024)
    batch = np.stack(
        [oracles.random_blobby_mask(rng, (24, 24, 24), n_blobs=3) for _ in range(100)]
    )
    # EDT trial masks, drawn up front so generation stays outside the timer
    edt_trials = []
    for spacing in SPACINGS + [(0.5, 1.0, 2.0)]:
        for _ in range(15):
            shape = tuple(int(n) for n in rng.integers(4, 17, size=3))
            edt_trials.append((rng.random(shape) < 0.55, spacing))

    erode(_mask(batch[0], (1.0, 1.0, 1.0)), 1.0)  # JIT warm-up (disk-cached)

    t0 = time.monotonic()
    checked = 0
    for spacing in SPACINGS:
        for r in RADII:
            kernel = oracles.se_kernel(r, spacing)
            want_erode = oracles.fft_erode(batch, kernel)
            want_dilate = oracles.fft_dilate(batch, kernel)
            want_open = oracles.fft_dilate(want_erode, kernel)
            want_close = oracles.fft_close(batch, kernel)
            for i in range(batch.shape[0]):
                m = _mask(batch[i], spacing)
                assert np.array_equal(erode(m, r).data, want_erode[i]), (spacing, r, i)
                assert np.array_equal(dilate(m, r).data, want_dilate[i]), (spacing, r, i)
                assert np.array_equal(binary_open(m, r).data, want_open[i]), (spacing, r, i)
                assert np.array_equal(binary_close(m, r).data, want_close[i]), (spacing, r, i)
                checked += 4

    exact_spacings = {(1.0, 1.0, 1.0), (0.5, 1.0, 2.0)}
    for m, spacing in edt_trials:
        got = edt_sq(_mask(m, spacing))
        want = oracles.brute_edt_sq(m, spacing)
        if spacing in exact_spacings:
            assert np.array_equal(got, want), spacing
        else:
            finite = np.isfinite(want)
            assert np.array_equal(finite, np.isfinite(got)), spacing
            np.testing.assert_allclose(got[finite], want[finite], rtol=1e-9, atol=0.0)
    elapsed = time.monotonic() - t0
    _report(
        "morphology-oracle-suite",
        elapsed < 60.0,
        f"({checked} op checks + {len(edt_trials)} EDT trials in {elapsed:.1f}s)",
    )


def test_hysteresis_and_fill_against_bfs_oracles():
    """Hysteresis equals a 26-connectivity BFS flood and fill_holes equals a
    border flood on 100 random volumes each, with exact mask equality."""
    rng = np.random.default_rng(77)
    for trial in range(100):
        shape = tuple(int(n) for n in rng.integers(8, 19, size=3))
        data = rng.integers(-400, 400, size=shape).astype(np.int16)
        lo, hi = sorted(rng.integers(-300, 300, size=2).tolist())
        domain = rng.random(shape) < 0.85
        got = hysteresis(
            CtVolume(data, (1, 1, 1)),
            lambda v: v >= hi,
            lambda v: v >= lo,
            _mask(domain, (1, 1, 1)),
            Connectivity.FULL26,
        )
        want = oracles.bfs_hysteresis(data >= hi, data >= lo, domain, 26)
        assert np.array_equal(got.data, want), f"hysteresis trial {trial}"

    for trial in range(100):
        shape = tuple(int(n) for n in rng.integers(8, 19, size=3))
        m = oracles.random_blobby_mask(rng, shape)
        got = fill_holes(_mask(m, (1, 1, 1)))
        assert np.array_equal(got.data, oracles.border_flood_fill(m)), f"fill trial {trial}"
    _report("hysteresis-and-fill-oracles", True, "(200 volumes, exact)")


@pytest.fixture(scope="module")
def phantom_noiseless():
    return phantom.generate(phantom.get_preset("default"))


def test_phantom_end_to_end_noiseless(phantom_noiseless):
    """Default preset, 256x256x120 at 1x1x2 mm, noiseless: Dice >= 0.99 for
    every compartment, under 30 s for the segmentation run."""
    res = phantom_noiseless
    t0 = time.monotonic()
    seg = run_pipeline(res.ct, res.truth["cavity"])
    elapsed = time.monotonic() - t0
    dices = {
        name: score(getattr(seg, name), res.truth[name]).dice
        for name in ("bone", "lung", "sat", "muscle", "vat")
    }
    ok = all(d >= 0.99 for d in dices.values()) and elapsed < 30.0
    detail = " ".join(f"{k}={v:.4f}" for k, v in dices.items()) + f" ({elapsed:.1f}s)"
    _report("phantom-noiseless-dice>=0.99", ok, detail)


def test_phantom_end_to_end_noisy():
    """Same phantom with sigma = 20 HU noise: Dice >= 0.95 per compartment."""
    res = phantom.generate(phantom.get_preset("default", seed=11, noise_sigma=20.0))
    t0 = time.monotonic()
    seg = run_pipeline(res.ct, res.truth["cavity"])
    elapsed = time.monotonic() - t0
    dices = {
        name: score(getattr(seg, name), res.truth[name]).dice
        for name in ("bone", "lung", "sat", "muscle", "vat")
    }
    ok = all(d >= 0.95 for d in dices.values()) and elapsed < 30.0
    detail = " ".join(f"{k}={v:.4f}" for k, v in dices.items()) + f" ({elapsed:.1f}s)"
    _report("phantom-noisy-dice>=0.95", ok, detail)


def test_rule_exercise_presets():
    """contrast-bowel: zero bone voxels inside the cavity; gas-pockets: zero
    lung voxels inside sub-200 cc pockets; with-table: zero body voxels in
    the table slab. Exact-zero checks."""
    res = phantom.generate(phantom.get_preset("contrast-bowel"))
    seg = run_pipeline(res.ct, res.truth["cavity"])
    bone_in_cavity = int(np.count_nonzero(seg.bone.data & res.truth["cavity"].data))

    res = phantom.generate(phantom.get_preset("gas-pockets"))
    seg = run_pipeline(res.ct, res.truth["cavity"])
    lung_in_gas = int(np.count_nonzero(seg.lung.data & res.extras["gas"].data))

    res = phantom.generate(phantom.get_preset("with-table"))
    seg = run_pipeline(res.ct, res.truth["cavity"])
    body_in_table = int(np.count_nonzero(seg.body.data & res.extras["table"].data))

    ok = bone_in_cavity == 0 and lung_in_gas == 0 and body_in_table == 0
    _report(
        "rule-exercise-presets",
        ok,
        f"(bone-in-cavity={bone_in_cavity} lung-in-gas={lung_in_gas} "
        f"body-in-table={body_in_table})",
    )


def test_metrics_identities():
    """dice == 2PR/(P+R) within 1e-12 on 1,000 random mask pairs, and the
    slice sampler reproduces [10,30,50,70,90] for a [10,90] extent."""
    rng = np.random.default_rng(5)
    checked = 0
    worst = 0.0
    while checked < 1000:
        a = rng.random((5, 5, 5)) < 0.5
        b = rng.random((5, 5, 5)) < 0.5
        a[2, 2, 2] = b[2, 2, 2] = True
        s = score(_mask(a, (1, 1, 1)), _mask(b, (1, 1, 1)))
        if not s.recall or not s.precision:
            continue
        hm = 2.0 * s.precision * s.recall / (s.precision + s.recall)
        worst = max(worst, abs(s.dice - hm))
        checked += 1
    cav = np.zeros((101, 3, 3), bool)
    cav[10:91, 1, 1] = True
    slices = sample_slices(_mask(cav, (1, 1, 1)), 5)
    ok = worst < 1e-12 and slices == [10, 30, 50, 70, 90]
    _report("metrics-identities", ok, f"(worst |dice-2PR/(P+R)| = {worst:.2e}, slices={slices})")


def test_threads_determinism(tmp_path):
    """segment with --threads 1 and --threads 8 produces byte-identical
    output files on the same inputs."""
    src = tmp_path / "phantom"
    assert main(["phantom", "--preset", "default", "--seed", "3", "--noise", "15",
                 "--out", str(src)]) == 0
    outs = []
    for n in ("1", "8"):
        out = tmp_path / f"threads{n}"
        code = main(["segment", "--ct", str(src / "ct.mhd"),
                     "--cavity", str(src / "cavity.mhd"),
                     "--out", str(out), "--threads", n])
        assert code == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    identical = all(
        (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes() for name in names
    )
    _report("threads-determinism", identical, f"({len(names)} files compared)")


def test_format_round_trip(tmp_path):
    """100 random volumes and masks survive write -> read bit-exactly."""
    rng = np.random.default_rng(99)
    for i in range(100):
        dims = rng.integers(1, 20, size=3)
        shape = (int(dims[2]), int(dims[1]), int(dims[0]))
        spacing = tuple(float(s) for s in rng.uniform(0.2, 5.0, size=3))
        origin = tuple(float(o) for o in rng.uniform(-200, 200, size=3))
        kind = i % 3
        if kind == 0:
            obj = CtVolume(rng.integers(-1024, 3072, shape).astype(np.int16), spacing, origin)
        elif kind == 1:
            obj = BinaryMask(rng.random(shape) < 0.5, spacing, origin)
        else:
            obj = LabelMap(rng.integers(0, 7, shape).astype(np.uint8), spacing, origin)
        path = tmp_path / f"rt{i}{'.mha' if i % 2 else '.mhd'}"
        write_mhd(obj, path)
        back = read_mhd_labels(path) if kind == 2 else read_mhd(path)
        assert back.dims == obj.dims and back.spacing == obj.spacing
        assert back.origin == obj.origin
        assert np.array_equal(back.data, obj.data), i
    _report("format-round-trip", True, "(100 objects bit-exact)")
