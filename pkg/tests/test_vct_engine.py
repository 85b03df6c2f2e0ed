"""Projection, noise, filtering, and reconstruction behavior."""

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ct_protopt._seeds import derive_seed
from ct_protopt.phantom import MaterialTable, make_disk_phantom
from ct_protopt.protocol_space import Kernel, ProtocolParams
from ct_protopt.vct_engine import (
    ScannerConfig,
    acquire_and_reconstruct,
    add_noise,
    forward_project,
    make_filter,
    read_image,
    reconstruct,
    write_image,
)

DISK_R = 40.0
CFG = ScannerConfig(n_views=180, n_detectors=352, fov_mm=120.0)


@pytest.fixture(scope="module")
def disk():
    # 0.125 mm grid: edge quantization must stay well under the 0.5% chord bound
    return make_disk_phantom([(0.0, 0.0, DISK_R)], fov_mm=120.0, spacing_mm=0.125)


@pytest.fixture(scope="module")
def disk_sino(disk):
    return forward_project(disk, 120, CFG)


# ---------------------------------------------------------------------------
# projector


def test_projector_matches_disk_chords(disk_sino):
    # centered disk: every view sees mu_water * chord(t), chord = 2*sqrt(R^2-t^2)
    mu_w = MaterialTable().mu_water(120)
    t = (np.arange(CFG.n_detectors) - (CFG.n_detectors - 1) / 2.0) * CFG.detector_pitch_mm
    inside = np.abs(t) <= 0.9 * DISK_R
    expected = mu_w * 2.0 * np.sqrt(DISK_R**2 - t[inside] ** 2)
    for view in (0, 45, 137):
        rel = np.abs(disk_sino.data[view, inside] - expected) / expected
        assert rel.max() < 0.005


def test_projector_is_zero_outside_object(disk_sino):
    t = (np.arange(CFG.n_detectors) - (CFG.n_detectors - 1) / 2.0) * CFG.detector_pitch_mm
    outside = np.abs(t) > DISK_R + 2.0
    assert np.abs(disk_sino.data[:, outside]).max() < 1e-6


def test_sinogram_shape_and_metadata(disk_sino):
    assert disk_sino.data.shape == (CFG.n_views, CFG.n_detectors)
    assert disk_sino.n_views == CFG.n_views
    assert disk_sino.n_detectors == CFG.n_detectors
    assert disk_sino.kv == 120
    assert disk_sino.mas is None
    assert disk_sino.meta["patient_id"] == "disk"


# ---------------------------------------------------------------------------
# FBP accuracy


def test_water_disk_reconstructs_near_zero_hu(disk, disk_sino):
    filt = make_filter(Kernel.RAMLAK, 0.4, CFG.nyquist_cpmm)
    img = reconstruct(disk_sino, filt, 0.5)
    assert img.matrix == 240
    c = (np.arange(img.matrix) - (img.matrix - 1) / 2.0) * img.pixel_mm
    rr = np.hypot(c[None, :], c[:, None])
    interior = img.pixels[rr < 0.8 * DISK_R]
    assert abs(float(interior.mean())) < 10.0
    # air well outside the disk stays near -1000
    air = img.pixels[rr > DISK_R + 8.0]
    assert abs(float(air.mean()) + 1000.0) < 15.0


def test_matrix_follows_pixel_size(disk_sino):
    filt = make_filter(Kernel.SMOOTH, 0.6, CFG.nyquist_cpmm)
    assert reconstruct(disk_sino, filt, 1.0).matrix == 120
    assert reconstruct(disk_sino, filt, 0.5).matrix == 240


def test_reconstruct_rejects_mismatched_filter(disk_sino):
    wrong = make_filter(Kernel.RAMLAK, 0.4, 0.75)
    with pytest.raises(ValueError, match="Nyquist"):
        reconstruct(disk_sino, wrong, 0.5)
    with pytest.raises(ValueError, match="pixel_mm"):
        reconstruct(disk_sino, make_filter(Kernel.RAMLAK, 0.4, CFG.nyquist_cpmm), 0.0)


# ---------------------------------------------------------------------------
# filters


def test_ramlak_window_is_flat_inside_band():
    filt = make_filter(Kernel.RAMLAK, 0.4, 1.0)
    f = np.linspace(0.0, 0.999, 64)
    assert np.allclose(filt.window(f), 1.0)
    assert filt.window(1.3) == 0.0
    assert filt.response(0.0) == 0.0


def test_apodizing_windows_attenuate_high_frequencies():
    nyq = 1.0
    for kernel, f50 in ((Kernel.COSINE, 0.6), (Kernel.SMOOTH, 0.6)):
        filt = make_filter(kernel, f50, nyq)
        assert filt.window(0.0) == pytest.approx(1.0)
        w = filt.window(np.linspace(0.0, nyq, 128))
        assert np.all(np.diff(w) <= 1e-12)  # monotone roll-off
        assert filt.window(f50) == pytest.approx(0.5, abs=1e-12)


def test_edge_kernels_boost_midband():
    nyq = 1.0
    for kernel in (Kernel.SHARP, Kernel.ENHANCING):
        filt = make_filter(kernel, 0.6, nyq)
        assert filt.window(0.5) > 1.0


def test_make_filter_validation():
    with pytest.raises(ValueError):
        make_filter(Kernel.SMOOTH, 1.0, 1.0)  # f50 at Nyquist
    with pytest.raises(ValueError):
        make_filter(Kernel.SMOOTH, 0.0, 1.0)
    with pytest.raises(ValueError):
        make_filter("smooth", 0.4, 1.0)


@settings(max_examples=30, deadline=None)
@given(
    kernel=st.sampled_from(list(Kernel)),
    f50=st.floats(0.05, 0.9),
    f=st.floats(0.0, 2.0),
)
def test_filter_band_limit_property(kernel, f50, f):
    filt = make_filter(kernel, f50, 1.0)
    w = float(filt.window(f))
    if f > 1.0:
        assert w == 0.0
    else:
        assert w >= 0.0
    assert float(filt.response(0.0)) == 0.0


# ---------------------------------------------------------------------------
# noise


def test_add_noise_is_deterministic_per_seed(disk_sino):
    a = add_noise(disk_sino, 80.0, seed=41)
    b = add_noise(disk_sino, 80.0, seed=41)
    c = add_noise(disk_sino, 80.0, seed=42)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)
    assert a.mas == 80.0
    assert a.noise_realization_seed == 41


def test_noise_variance_tracks_inverse_mas(disk_sino):
    # pre-log counting noise: residual variance on the line integrals ~ 1/mAs
    lo = add_noise(disk_sino, 25.0, seed=7).data - disk_sino.data
    hi = add_noise(disk_sino, 150.0, seed=7).data - disk_sino.data
    t = (np.arange(CFG.n_detectors) - (CFG.n_detectors - 1) / 2.0) * CFG.detector_pitch_mm
    sel = np.abs(t) < 0.8 * DISK_R
    ratio = lo[:, sel].var() / hi[:, sel].var()
    assert ratio == pytest.approx(6.0, rel=0.10)


def test_add_noise_rejects_bad_input(disk_sino):
    with pytest.raises(ValueError):
        add_noise(disk_sino, 0.0, seed=1)
    noisy = add_noise(disk_sino, 80.0, seed=1)
    with pytest.raises(ValueError):
        add_noise(noisy, 80.0, seed=2)


def test_photon_starvation_flag(disk_sino):
    starved = add_noise(disk_sino, 25.0, seed=3, flux_per_mas=0.2)
    assert starved.meta["photon_starvation_fraction"] > 0.01
    healthy = add_noise(disk_sino, 25.0, seed=3)
    assert "photon_starvation_fraction" not in healthy.meta


# ---------------------------------------------------------------------------
# full pipeline


def test_slice_averaging_stacks_two_realizations(disk):
    p = ProtocolParams(120, 80, Kernel.SMOOTH, 0.6, 1.0, 1.0)
    sino = forward_project(disk, 120, CFG)
    img = acquire_and_reconstruct(disk, p, CFG, seed=9, noiseless=sino)

    filt = make_filter(Kernel.SMOOTH, 0.6, CFG.nyquist_cpmm)
    reps = [
        reconstruct(add_noise(sino, 80, derive_seed(9, "rep", r)), filt, 1.0).pixels
        for r in range(2)
    ]
    manual = np.mean(np.stack(reps), axis=0, dtype=np.float64).astype(np.float32)
    assert np.array_equal(img.pixels, manual)


def test_thicker_slice_lowers_noise(disk):
    sino = forward_project(disk, 120, CFG)
    thin = acquire_and_reconstruct(
        disk, ProtocolParams(120, 80, Kernel.SMOOTH, 0.6, 0.5, 1.0), CFG, seed=4, noiseless=sino
    )
    thick = acquire_and_reconstruct(
        disk, ProtocolParams(120, 80, Kernel.SMOOTH, 0.6, 1.0, 1.0), CFG, seed=4, noiseless=sino
    )
    c = (np.arange(thin.matrix) - (thin.matrix - 1) / 2.0) * thin.pixel_mm
    rr = np.hypot(c[None, :], c[:, None])
    sel = rr < 0.7 * DISK_R
    assert thick.pixels[sel].std() < thin.pixels[sel].std()


def test_pipeline_rejects_foreign_sinogram(disk):
    p = ProtocolParams(100, 80, Kernel.SMOOTH, 0.6, 0.5, 1.0)
    sino_120 = forward_project(disk, 120, CFG)
    with pytest.raises(ValueError, match="noiseless"):
        acquire_and_reconstruct(disk, p, CFG, noiseless=sino_120)


# ---------------------------------------------------------------------------
# image file format


def test_image_file_roundtrip(disk):
    p = ProtocolParams(120, 25, Kernel.SHARP, 0.8, 0.5, 0.5)
    img = acquire_and_reconstruct(disk, p, CFG, seed=2)
    buf = io.BytesIO()
    write_image(img, buf)
    buf.seek(0)
    back = read_image(buf)
    assert np.array_equal(back.pixels, img.pixels)
    assert back.pixel_mm == img.pixel_mm
    assert back.slice_mm == img.slice_mm
    assert back.params == p
    assert back.provenance["patient_id"] == "disk"


def test_read_image_rejects_garbage():
    with pytest.raises(ValueError, match="magic"):
        read_image(io.BytesIO(b"not an image\n"))


# ---------------------------------------------------------------------------
# config validation


def test_scanner_config_validation():
    with pytest.raises(ValueError, match="covers"):
        ScannerConfig(n_detectors=128, fov_mm=360.0)
    with pytest.raises(ValueError):
        ScannerConfig(n_views=0)
    with pytest.raises(ValueError):
        ScannerConfig(flux_per_mas=0.0)
    assert ScannerConfig().nyquist_cpmm == pytest.approx(1.0)
