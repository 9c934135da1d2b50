import logging

import numpy as np
import pytest

from bodycomp import phantom
from bodycomp.metrics import score
from bodycomp.pipeline import (
    EmptyBodyError,
    PipelineConfig,
    config_from_text,
    config_to_text,
    run_pipeline,
    segment_body,
    validate_inputs,
)
from bodycomp.volume import BinaryMask, CtVolume, GeometryError


@pytest.fixture(scope="module")
def default_run():
    res = phantom.generate(phantom.get_preset("default"))
    seg = run_pipeline(res.ct, res.truth["cavity"])
    return res, seg


def small_volume(fill=0, shape=(6, 8, 8), spacing=(1.0, 1.0, 2.0)):
    return CtVolume(np.full(shape, fill, np.int16), spacing)


class TestConfig:
    def test_defaults_are_paper_constants(self):
        cfg = PipelineConfig()
        assert cfg.bone_low_hu == 200 and cfg.bone_high_hu == 400
        assert cfg.bone_close_mm == 16.0
        assert cfg.lung_low_hu == -900 and cfg.lung_high_hu == -300
        assert cfg.lung_close_mm == 5.0
        assert cfg.lung_keep_top == 2 and cfg.lung_min_cc == 200.0
        assert cfg.sat_seed_hu == -50 and cfg.sat_grow_hu == 0
        assert cfg.vat_floor_hu == -200
        assert cfg.muscle_max_hu == 200 and cfg.muscle_open_mm == 2.0
        assert cfg.body_erode_mm == 4.0
        assert cfg.target_slice_mm == 2.0

    def test_round_trip_text(self):
        cfg = PipelineConfig(body_threshold_hu=-300, sat_openclose_mm=1.5)
        back = config_from_text(config_to_text(cfg))
        assert back == cfg

    def test_partial_override(self):
        cfg = config_from_text("bone_close_mm = 8\n# comment\n\nlung_keep_top = 1\n")
        assert cfg.bone_close_mm == 8.0
        assert cfg.lung_keep_top == 1
        assert cfg.bone_low_hu == 200

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            config_from_text("bananas = 3\n")

    def test_invalid_combination_rejected(self):
        with pytest.raises(ValueError):
            config_from_text("vat_floor_hu = 0\n")  # floor must stay below seed

    def test_seed_grow_order_enforced(self):
        with pytest.raises(ValueError):
            PipelineConfig(sat_seed_hu=10, sat_grow_hu=0).validate()


class TestValidateInputs:
    def test_matching_grids_pass(self):
        ct = small_volume()
        cav = BinaryMask(np.zeros(ct.data.shape, bool), ct.spacing)
        cav_data = cav.data.copy()
        cav_data[3, 4, 4] = True
        validate_inputs(ct, BinaryMask(cav_data, ct.spacing))

    def test_mismatched_nz_rejected(self):
        ct = small_volume()
        cav = BinaryMask(np.zeros((7, 8, 8), bool), ct.spacing)
        with pytest.raises(GeometryError):
            validate_inputs(ct, cav)

    def test_empty_cavity_warns_but_passes(self, caplog):
        ct = small_volume()
        cav = BinaryMask(np.zeros(ct.data.shape, bool), ct.spacing)
        with caplog.at_level(logging.WARNING):
            validate_inputs(ct, cav)
        assert any("empty" in r.message for r in caplog.records)

    def test_resampling_reconciles_spacings(self):
        # 4 mm CT against a 2 mm cavity: equal grids after resampling
        ct = CtVolume(np.zeros((5, 8, 8), np.int16), (1.0, 1.0, 4.0))
        cav = BinaryMask(np.zeros((9, 8, 8), bool), (1.0, 1.0, 2.0))
        validate_inputs(ct, cav)


class TestSegmentBody:
    def test_all_air_is_fatal(self):
        with pytest.raises(EmptyBodyError):
            segment_body(small_volume(fill=-1000), PipelineConfig())

    def test_cylinder_erodes_by_radius(self):
        # solid HU 0 cylinder (radius 30 mm) in air: body = cylinder eroded
        # 4 mm; mismatches allowed only within a 1-voxel boundary band
        nz, ny, nx = 30, 80, 80
        x = np.arange(nx) - (nx - 1) / 2.0
        y = (np.arange(ny) - (ny - 1) / 2.0)[:, None]
        rr = x[None, :] ** 2 + y**2
        disc = rr <= 30.0**2
        data = np.where(disc, 0, -1000).astype(np.int16)
        ct = CtVolume(np.broadcast_to(data, (nz, ny, nx)).copy(), (1.0, 1.0, 2.0))
        body = segment_body(ct, PipelineConfig())

        radius = np.sqrt(rr)
        z_ok = np.zeros((nz, 1, 1), bool)
        z_idx = np.arange(nz)
        z_ok[(np.minimum(z_idx + 1, nz - z_idx) * 2.0 > 4.0), 0, 0] = True
        analytic = (radius < 26.0)[None] & z_ok
        diff = body.data ^ analytic
        if diff.any():
            # every disagreeing voxel hugs the eroded boundary
            band = np.abs(radius[None].repeat(nz, 0)[diff] - 26.0)
            assert band.max() <= np.hypot(1.0, 1.0)

    def test_table_slab_discarded(self):
        res = phantom.generate(phantom.get_preset("with-table"))
        body = segment_body(res.ct, PipelineConfig())
        assert not np.any(body.data & res.extras["table"].data)


class TestPhantomRuns:
    def test_compartment_dice(self, default_run):
        res, seg = default_run
        for name in ("bone", "lung", "sat", "muscle", "vat"):
            s = score(getattr(seg, name), res.truth[name])
            assert s.dice >= 0.99, (name, s.dice)

    def test_step_masks_pairwise_disjoint(self, default_run):
        _, seg = default_run
        names = ("bone", "lung", "sat", "muscle", "vat")
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                assert not np.any(getattr(seg, a).data & getattr(seg, b).data), (a, b)

    def test_containment_algebra(self, default_run):
        res, seg = default_run
        cavity = seg.cavity.data
        assert np.all(seg.vat.data <= cavity)
        assert np.all(seg.lung.data <= cavity)  # anatomically consistent input
        assert not np.any(seg.sat.data & cavity)
        assert not np.any(seg.muscle.data & cavity)
        assert not np.any(seg.bone.data & cavity)
        for name in ("bone", "lung", "sat", "muscle", "vat"):
            assert np.all(getattr(seg, name).data <= seg.body.data)

    def test_hu_consistency(self, default_run):
        res, seg = default_run
        hu = res.ct.data  # already at the target slice thickness
        assert np.all(hu[seg.sat.data] < 0)
        assert np.all(hu[seg.vat.data] < 0)
        lung_hu = hu[seg.lung.data]
        assert np.all((lung_hu >= -900) & (lung_hu <= -300))

    def test_bone_includes_marrow_excludes_detached_nodule(self, default_run):
        res, seg = default_run
        spec = phantom.get_preset("default")
        # marrow core (250 HU, below the seed threshold) rides along with
        # the cortical shell
        marrow = phantom._Raster(spec).box(spec.marrow_half_x_mm, *spec.marrow_y_mm)
        marrow &= res.truth["body"].data
        assert np.all(seg.bone.data[marrow])
        # the detached 250 HU nodule has no seed: not bone, and over the
        # muscle cut: not muscle
        nodule = res.extras["nodule"].data
        assert not np.any(seg.bone.data & nodule)
        assert not np.any(seg.muscle.data & nodule)

    def test_labelmap_reconstructible(self, default_run):
        _, seg = default_run
        labels = seg.labels.data
        assert np.array_equal(labels == 2, seg.bone.data)
        assert np.array_equal(labels == 3, seg.lung.data)
        assert np.array_equal(labels == 4, seg.sat.data)
        assert np.array_equal(labels == 5, seg.muscle.data)
        assert np.array_equal(labels == 6, seg.vat.data)
        assert np.array_equal(labels != 0, seg.body.data)

    def test_rerun_bit_identical(self, default_run):
        res, seg = default_run
        again = run_pipeline(res.ct, res.truth["cavity"])
        assert np.array_equal(seg.labels.data, again.labels.data)

    def test_empty_cavity_lung_survives_vat_empty(self):
        res = phantom.generate(phantom.get_preset("default"))
        empty = BinaryMask(np.zeros(res.ct.data.shape, bool), res.ct.spacing)
        seg = run_pipeline(res.ct, empty)
        assert seg.vat.count == 0
        assert seg.lung.count > 0

    def test_geometry_mismatch_is_fatal(self):
        res = phantom.generate(phantom.get_preset("default"))
        bad = BinaryMask(
            np.zeros((10, 256, 256), bool), res.ct.spacing, res.ct.origin
        )
        with pytest.raises(GeometryError):
            run_pipeline(res.ct, bad, resample=False)


class TestRulePresets:
    def test_contrast_blob_never_bone(self):
        res = phantom.generate(phantom.get_preset("contrast-bowel"))
        seg = run_pipeline(res.ct, res.truth["cavity"])
        assert int(np.count_nonzero(seg.bone.data & res.truth["cavity"].data)) == 0
        assert int(np.count_nonzero(seg.bone.data & res.extras["contrast"].data)) == 0

    def test_gas_pockets_never_lung(self):
        res = phantom.generate(phantom.get_preset("gas-pockets"))
        seg = run_pipeline(res.ct, res.truth["cavity"])
        assert int(np.count_nonzero(seg.lung.data & res.extras["gas"].data)) == 0

    def test_merged_lungs_single_component_kept(self):
        from bodycomp.morphology import Connectivity, components

        res = phantom.generate(phantom.get_preset("merged-lungs"))
        seg = run_pipeline(res.ct, res.truth["cavity"])
        assert components(seg.lung, Connectivity.FULL26).n == 1
        assert score(seg.lung, res.truth["lung"]).dice >= 0.99

    def test_no_thorax_empty_lungs(self):
        res = phantom.generate(phantom.get_preset("no-thorax"))
        seg = run_pipeline(res.ct, res.truth["cavity"])
        assert seg.lung.count == 0


class TestArbitraryInputs:
    def test_disjointness_on_random_noise_volumes(self, rng):
        # pure noise percolates through every threshold band; the step
        # domains must still come out pairwise disjoint and body-contained
        for trial in range(3):
            data = rng.integers(-1024, 3072, size=(24, 48, 48)).astype(np.int16)
            ct = CtVolume(data, (1.0, 1.0, 2.0))
            cavity = BinaryMask(rng.random(data.shape) < 0.3, ct.spacing)
            try:
                seg = run_pipeline(ct, cavity)
            except EmptyBodyError:
                continue
            names = ("bone", "lung", "sat", "muscle", "vat")
            for i, a in enumerate(names):
                for b in names[i + 1 :]:
                    assert not np.any(getattr(seg, a).data & getattr(seg, b).data), (a, b)
                assert np.all(getattr(seg, names[i]).data <= seg.body.data)
            assert np.all(seg.vat.data <= cavity.data)
            assert not np.any(seg.sat.data & cavity.data & seg.body.data)

    def test_resampling_recorded_in_provenance(self):
        ct = CtVolume(np.zeros((9, 32, 32), np.int16), (1.0, 1.0, 4.0))
        body = np.full((9, 32, 32), -1000, np.int16)
        body[:, 8:24, 8:24] = 0
        ct = CtVolume(body, (1.0, 1.0, 4.0))
        cavity = np.zeros((9, 32, 32), bool)
        cavity[2:7, 14:18, 14:18] = True
        seg = run_pipeline(ct, BinaryMask(cavity, ct.spacing))
        assert seg.provenance.resampled
        assert seg.labels.spacing[2] == 2.0
        assert seg.labels.data.shape[0] == 17  # floor(8*4/2) + 1


class TestConfigMonotonicity:
    def test_sat_monotone_in_seed_set(self):
        # hysteresis seed-set monotonicity: shrinking the seed set (a more
        # negative seed cut) can only remove seeded components, so SAT
        # shrinks; enlarging it can only add them
        res = phantom.generate(phantom.get_preset("default", seed=5, noise_sigma=20.0))
        cavity = res.truth["cavity"]
        stricter = run_pipeline(res.ct, cavity, PipelineConfig(sat_seed_hu=-80))
        base = run_pipeline(res.ct, cavity, PipelineConfig())
        looser = run_pipeline(res.ct, cavity, PipelineConfig(sat_seed_hu=-20))
        assert np.all(stricter.sat.data <= base.sat.data)
        assert np.all(base.sat.data <= looser.sat.data)
