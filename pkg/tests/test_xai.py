import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evmfusion.gradsuite import tiny_model_config
from evmfusion.pipeline import EVMFusion, build_variant
from evmfusion.xai import (HEATMAPS, VISUAL_ARTIFACTS, XaiBundle, XaiExportError, export_bundle, load_bundle,
                           read_manifest, read_matrix_csv, read_pgm, render_heatmap, write_matrix_csv, write_pgm)


def test_two_by_two_ramp():
    assert render_heatmap([[1.0, 2.0], [3.0, 4.0]]).ravel().tolist() == [0, 85, 170, 255]


def test_three_values_round_half_up():
    # 1 sits exactly half way: 127.5 rounds up
    assert render_heatmap([0.0, 1.0, 2.0]).tolist() == [0, 128, 255]
    assert render_heatmap([-3.0, 0.0, 7.0]).tolist() == [0, 77, 255]   # 76.5 → 77


def test_constant_map_is_black():
    assert np.all(render_heatmap(np.full((3, 4), 2.5)) == 0)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        render_heatmap([0.0, np.nan])


def test_spanning_integer_map_is_identity():
    x = np.arange(256.0).reshape(16, 16)
    assert np.array_equal(render_heatmap(x), x.astype(np.uint8))


def test_negation_reverses_ramp():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.normal(size=(5, 7))
        assert np.array_equal(render_heatmap(-x), 255 - render_heatmap(x))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-64, 64), min_size=2, max_size=30), st.integers(-6, 6), st.integers(-50, 50))
def test_positive_affine_invariance(ints, log_a, b):
    # dyadic inputs keep a*x + b exact, so the invariance must hold bit for bit
    x = np.array(ints, dtype=np.float64) / 8.0
    assert np.array_equal(render_heatmap(2.0 ** log_a * x + b), render_heatmap(x))


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, size=(5, 9)).astype(np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n9 5\n255\n") and len(raw) == 11 + 45
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_csv_round_trip_is_bit_exact(tmp_path):
    m = np.random.default_rng(2).normal(size=(4, 6)) * 10.0 ** np.arange(-3, 3)
    m[0, 0] = 5e-324
    write_matrix_csv(tmp_path / "m.csv", m)
    assert np.array_equal(read_matrix_csv(tmp_path / "m.csv"), m)
    write_matrix_csv(tmp_path / "l.csv", m[:3, :3], row_labels="abc", col_labels="abc")
    assert np.array_equal(read_matrix_csv(tmp_path / "l.csv", labelled=True), m[:3, :3])


def capture(variant):
    cfg = build_variant(variant, tiny_model_config())
    _, bundles = EVMFusion(cfg)(np.random.default_rng(3).uniform(size=(1, 1, 8, 8)), capture=True)
    return cfg, bundles[0]


def test_duhf_bundle_has_all_artifacts(tmp_path):
    cfg, bundle = capture("DUHF")
    assert bundle.present() == list(VISUAL_ARTIFACTS)
    assert np.all((bundle.se_scores > 0) & (bundle.se_scores < 1))
    assert np.max(np.abs(bundle.cma_weights.sum(axis=1) - 1)) < 1e-9
    files = export_bundle(bundle, tmp_path)
    entries, prediction = read_manifest(tmp_path)
    assert entries == files
    assert prediction[0] == bundle.predicted_class and prediction[1] == bundle.prediction[1]
    for name in HEATMAPS:
        assert read_pgm(tmp_path / files[name]).shape == getattr(bundle, name).shape
    back = load_bundle(tmp_path)
    for name in VISUAL_ARTIFACTS:
        assert np.array_equal(getattr(back, name), getattr(bundle, name)), name
    assert np.array_equal(back.naf_alpha, bundle.naf_alpha)
    assert back.path_labels == ("dense", "unet", "trad")
    assert back.slot_names == tuple(cfg.features.layout)


def test_du_bundle_has_no_se_scores(tmp_path):
    _, bundle = capture("DU")
    assert bundle.se_scores is None and "se_scores" not in bundle.present()
    files = export_bundle(bundle, tmp_path)
    assert "se_scores" not in files and not (tmp_path / "se_scores.csv").exists()


def test_export_is_repeatable(tmp_path):
    _, bundle = capture("DUHF")
    export_bundle(bundle, tmp_path / "a")
    export_bundle(bundle, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_capture_copies_arrays():
    src = np.ones((2, 2))
    bundle = XaiBundle.capture({"dense_spatial": src})
    src[0, 0] = 5.0
    assert bundle.dense_spatial[0, 0] == 1.0


def test_export_failure_raises(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(XaiExportError):
        export_bundle(XaiBundle(dense_spatial=np.eye(2)), blocker / "sub")
