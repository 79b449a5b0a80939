import numpy as np
import pytest

from qalloc import allocate, harness, modelio, nn, probes
from qalloc.harness import CurvePoint
from qalloc.nn import Dataset, Layer, Model
from qalloc.probes import LayerProfile, ProbeConfig


@pytest.fixture(scope="module")
def small_rig():
    """Two-layer dense fixture small enough for fast sweeps."""
    rng = np.random.default_rng(0)
    w1 = rng.uniform(-0.3, 0.3, size=(12, 16)).astype(np.float32)
    w2 = rng.uniform(-0.3, 0.3, size=(16, 5)).astype(np.float32)
    model = Model((Layer("dense", w1), Layer("relu"), Layer("dense", w2)), (12,))
    inputs = rng.standard_normal((400, 12)).astype(np.float32)
    labels = nn.classify_batch(nn.forward_batch(model, inputs))
    return model, Dataset(inputs, labels)


@pytest.fixture(scope="module")
def small_profiles(small_rig):
    model, ds = small_rig
    cfg = ProbeConfig(delta_acc=0.3, acc_tolerance=0.02, seed=1)
    return harness.run_pipeline(model, ds, cfg)


class TestPipeline:
    def test_one_record_per_weighted_layer(self, small_rig, small_profiles):
        model, _ = small_rig
        assert [p.index for p in small_profiles] == list(model.weighted_indices)

    def test_rerun_same_seed_identical(self, small_rig, small_profiles):
        model, ds = small_rig
        cfg = ProbeConfig(delta_acc=0.3, acc_tolerance=0.02, seed=1)
        assert harness.run_pipeline(model, ds, cfg) == small_profiles

    def test_single_layer_t_recomputable_from_persisted_parts(self, tmp_path):
        rng = np.random.default_rng(8)
        w = rng.uniform(-0.5, 0.5, size=(10, 4)).astype(np.float32)
        model = Model((Layer("dense", w),), (10,))
        inputs = rng.standard_normal((300, 10)).astype(np.float32)
        ds = Dataset(inputs, nn.classify_batch(nn.forward_batch(model, inputs)))
        cfg = ProbeConfig(delta_acc=0.3, acc_tolerance=0.02, seed=2)
        profiles = harness.run_pipeline(model, ds, cfg, out_dir=tmp_path)

        import json
        meta = json.loads((tmp_path / "profiles.json").read_text())["meta"]
        margins = json.loads((tmp_path / "margins.json").read_text())
        assert profiles[0].t == meta["noise_powers_t"][0] / margins["mean_r_star"]

    def test_persists_profiles_and_margins(self, small_rig, tmp_path):
        model, ds = small_rig
        cfg = ProbeConfig(delta_acc=0.3, acc_tolerance=0.02, seed=1)
        harness.run_pipeline(model, ds, cfg, out_dir=tmp_path)
        assert (tmp_path / "profiles.json").exists()
        assert (tmp_path / "margins.json").exists()
        loaded, meta = modelio.load_profiles(tmp_path / "profiles.json")
        assert meta["baseline_accuracy"] == 1.0
        assert len(loaded) == 2


class TestSweep:
    def test_equal_at_16_bits_matches_float_baseline(self, small_rig, small_profiles):
        model, ds = small_rig
        curves = harness.sweep(model, ds, small_profiles, b1_values=[16.0],
                               methods=("equal",))
        assert abs(curves["equal"][0].top1 - 1.0) <= 0.001

    def test_equal_curve_sizes_strictly_increase(self, small_rig, small_profiles):
        model, ds = small_rig
        curves = harness.sweep(model, ds, small_profiles, b1_values=[4, 6, 8, 10],
                               methods=("equal",))
        sizes = [p.size_bits for p in curves["equal"]]
        assert sizes == sorted(sizes) and len(set(sizes)) == len(sizes)

    def test_adaptive_emits_at_least_as_many_points_as_sqnr(self, small_rig, small_profiles):
        model, ds = small_rig
        curves = harness.sweep(model, ds, small_profiles, b1_values=[5, 6.5, 8],
                               methods=("adaptive", "sqnr"))
        assert len(curves["adaptive"]) >= len(curves["sqnr"])

    def test_size_bits_equals_allocation_total(self, small_rig, small_profiles):
        model, ds = small_rig
        curves = harness.sweep(model, ds, small_profiles, b1_values=[6],
                               methods=("adaptive",))
        sizes = [p.s for p in small_profiles]
        for pt in curves["adaptive"]:
            assert pt.size_bits == allocate.size_bits(sizes, pt.allocation.b_int)

    def test_equal_skips_fractional_anchors(self, small_rig, small_profiles):
        model, ds = small_rig
        curves = harness.sweep(model, ds, small_profiles, b1_values=[6.5],
                               methods=("equal",))
        assert curves["equal"] == []

    def test_fc_bits_pins_dense_layers(self, small_rig, small_profiles):
        model, ds = small_rig
        curves = harness.sweep(model, ds, small_profiles, b1_values=[6],
                               methods=("sqnr",), fc_bits=16)
        for pt in curves["sqnr"]:
            assert all(b == 16 for b in pt.allocation.b_int)  # both layers are dense


def curve(method, pts):
    return [CurvePoint(method, float(b), 0, s, s / 8 / 2 ** 20, a) for b, s, a in pts]


class TestCompare:
    def test_self_comparison_is_unit(self):
        pts = curve("adaptive", [(4, 100, 0.5), (6, 200, 0.7), (8, 300, 0.9)])
        report = harness.compare({"adaptive": pts, "equal": list(pts)})
        entry = report.entries[0]
        assert entry.dominance_fraction == 1.0
        assert all(r == 1.0 for r in entry.ratios)

    def test_disjoint_ranges_flagged(self):
        a = curve("adaptive", [(4, 100, 0.2), (6, 200, 0.3)])
        b = curve("equal", [(4, 150, 0.8), (6, 250, 0.9)])
        report = harness.compare({"adaptive": a, "equal": b})
        assert report.entries[0].disjoint

    def test_interpolates_on_size(self):
        a = curve("adaptive", [(4, 100, 0.5), (8, 300, 0.9)])
        b = curve("equal", [(4, 200, 0.5), (8, 400, 0.9)])
        report = harness.compare({"adaptive": a, "equal": b})
        entry = report.entries[0]
        assert entry.accuracies == (0.5, 0.9)
        assert entry.ratios == (pytest.approx(100 / 200), pytest.approx(300 / 400))
        assert entry.dominance_fraction == 1.0

    def test_needs_two_curves(self):
        with pytest.raises(ValueError):
            harness.compare({"adaptive": curve("adaptive", [(4, 1, 0.1)])})

    def test_pareto_frontier_drops_dominated_points(self):
        pts = curve("equal", [(4, 100, 0.5), (5, 150, 0.4), (6, 200, 0.7)])
        front = harness.pareto_frontier(pts)
        assert front == [(100.0, 0.5), (200.0, 0.7)]


class TestChecks:
    def test_quantizer_law_check_passes(self):
        assert harness.check_quantizer_law(n=20_000).passed

    def test_kkt_check_passes(self):
        assert harness.check_kkt(n_sets=20).passed

    def test_kkt_check_fails_with_corrupted_t(self):
        profs = [LayerProfile(index=i, kind="dense", s=s, t=t, p=p, noise_scale=1.0,
                              delta_acc=0.5, b_probe=10, weight_range=(-1, 1))
                 for i, (s, t, p) in enumerate([(100, 2.0, 1.0), (5000, 0.5, 3.0), (70, 4.0, 0.3)])]
        a = allocate.allocate_adaptive(profs, 8.0)
        corrupted = [profs[0],
                     LayerProfile(index=1, kind="dense", s=5000, t=5.0, p=3.0, noise_scale=1.0,
                                  delta_acc=0.5, b_probe=10, weight_range=(-1, 1)),
                     profs[2]]
        assert allocate.stationarity_residual(profs, a.b_real) <= 1e-9
        assert allocate.stationarity_residual(corrupted, a.b_real) > 1e-3

    def test_optimality_check_passes(self):
        assert harness.check_optimality(n_sets=5, grid_step=0.02, span=2.0).passed

    def test_sqnr_special_case_check_passes(self):
        assert harness.check_sqnr_special_case(n_sets=10).passed

    def test_lemma_check_passes(self):
        assert harness.check_lemma(ds=(10,), deltas=(0.1,), trials=2000).passed

    def test_equal_envelope_allows_one_dip(self):
        pts = curve("equal", [(4, 100, 0.5), (5, 150, 0.47), (6, 200, 0.7)])
        assert harness.check_equal_envelope(pts).passed
        pts_bad = curve("equal", [(4, 100, 0.5), (5, 150, 0.3), (6, 200, 0.25)])
        assert not harness.check_equal_envelope(pts_bad).passed

    def test_verify_battery_on_small_rig(self, small_rig, tmp_path):
        model, ds = small_rig
        cfg = harness.VerifyConfig(seed=1, quantizer_weights=20_000, lemma_trials=2000,
                                   kkt_sets=10, grid_step=0.05,
                                   anchors=(5.0, 6.0, 7.0, 8.0, 9.0, 10.0), max_variants=4)
        results = harness.verify(model, ds, cfg, tmp_dir=tmp_path)
        names = [r.name for r in results]
        assert "quantizer_law" in names and "roundtrips" in names
        # structural checks must pass even on the throwaway rig
        for required in ("quantizer_law", "kkt_stationarity", "optimality_vs_grid",
                         "sqnr_special_case", "lemma_bound", "sweep_reproducible",
                         "pipeline_deterministic", "roundtrips"):
            r = next(r for r in results if r.name == required)
            assert r.passed, f"{required}: {r.detail}"

    def test_verify_handles_empty_dataset_as_failure_not_crash(self, small_rig, tmp_path):
        model, _ = small_rig
        empty = Dataset(np.zeros((0, 12), dtype=np.float32), [])
        cfg = harness.VerifyConfig(quantizer_weights=5000, lemma_trials=2000,
                                   kkt_sets=5, grid_step=0.1, anchors=(6.0,), max_variants=2)
        results = harness.verify(model, empty, cfg, tmp_dir=tmp_path)
        fixture_bound = [r for r in results if r.name in ("linearity", "pipeline")]
        assert fixture_bound and not any(r.passed for r in fixture_bound)
