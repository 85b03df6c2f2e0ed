"""Noise, resolution, and task-detectability metric oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.special import ndtri

from ct_protopt.iq_metrics import (
    MetricError,
    MtfCurve,
    NpsMap,
    cnr,
    detectability,
    detection_accuracy,
    full_report,
    iq_report_rows,
    IQ_CSV_COLUMNS,
    lesion_contrast,
    liver_noise,
    measure_mtf,
    measure_nps,
    noise_index,
    nps_radial_profile,
)
from ct_protopt.phantom import PatientAttrs, generate, make_disk_phantom
from ct_protopt.protocol_space import Kernel, ProtocolParams
from ct_protopt.vct_engine import (
    ReconImage,
    ScannerConfig,
    acquire_and_reconstruct,
    add_noise,
    forward_project,
    make_filter,
    reconstruct,
)

CFG = ScannerConfig(n_views=180, n_detectors=352, fov_mm=120.0)


def synthetic_image(pixels: np.ndarray, pixel_mm: float = 1.0) -> ReconImage:
    return ReconImage(
        pixels=np.asarray(pixels, dtype=np.float32),
        pixel_mm=pixel_mm,
        slice_mm=0.5,
        params=None,
    )


@pytest.fixture(scope="module")
def lesion_phantom():
    # seed picked for a single >6 mm lesion; keeps the eroded core non-empty
    return generate(
        PatientAttrs(bmi=25.0, sex="M", patient_id="iq"), 1, 1, fov_mm=120.0, spacing_mm=0.25
    )


@pytest.fixture(scope="module")
def lesion_sino(lesion_phantom):
    return forward_project(lesion_phantom, 120, CFG)


# ---------------------------------------------------------------------------
# noise index


def test_noise_index_recovers_gaussian_sigma():
    rng = np.random.default_rng(7)
    img = synthetic_image(rng.normal(0.0, 20.0, size=(256, 256)))
    est = noise_index(img, seed=0)
    assert est == pytest.approx(20.0, rel=0.03)


def test_noise_index_constant_image_is_zero():
    img = synthetic_image(np.zeros((64, 64)))
    assert noise_index(img, seed=0) == 0.0


def test_noise_index_stable_across_roi_seeds():
    rng = np.random.default_rng(8)
    img = synthetic_image(rng.normal(50.0, 12.0, size=(256, 256)))
    vals = [noise_index(img, seed=s) for s in range(5)]
    mid = float(np.mean(vals))
    assert all(abs(v - mid) / mid < 0.02 for v in vals)


def test_noise_index_needs_in_range_rois():
    img = synthetic_image(np.full((128, 128), 600.0))
    with pytest.raises(MetricError, match="in-range"):
        noise_index(img, seed=0)
    with pytest.raises(MetricError, match="too small"):
        noise_index(synthetic_image(np.zeros((16, 16))), seed=0)


# ---------------------------------------------------------------------------
# NPS


def test_white_nps_integrates_to_variance_and_is_flat():
    rng = np.random.default_rng(5)
    sigma = 15.0
    a = synthetic_image(rng.normal(0.0, sigma, size=(256, 256)))
    b = synthetic_image(rng.normal(0.0, sigma, size=(256, 256)))
    nps = measure_nps([a, b])
    df = nps.freqs[1] - nps.freqs[0]
    integral = float(nps.grid.sum()) * df * df
    assert integral == pytest.approx(sigma**2, rel=0.05)
    centers, prof = nps_radial_profile(nps, n_bins=8)
    flat = prof[1:] / prof[1:].mean()  # DC bin holds the detrend leftovers
    assert np.all(np.abs(flat - 1.0) < 0.15)


def test_nps_difference_mode_cancels_anatomy():
    rng = np.random.default_rng(9)
    sigma = 10.0
    yy, xx = np.mgrid[0:256, 0:256]
    anatomy = 150.0 * np.exp(-((yy - 128.0) ** 2 + (xx - 128.0) ** 2) / (2 * 60.0**2))
    a = synthetic_image(anatomy + rng.normal(0.0, sigma, size=(256, 256)))
    b = synthetic_image(anatomy + rng.normal(0.0, sigma, size=(256, 256)))
    nps = measure_nps([a, b])
    df = nps.freqs[1] - nps.freqs[0]
    assert float(nps.grid.sum()) * df * df == pytest.approx(sigma**2, rel=0.06)


def test_smooth_kernel_shifts_nps_toward_low_frequencies(lesion_sino):
    noisy = add_noise(lesion_sino, 80.0, seed=3)
    centroids = {}
    for kernel, f50 in ((Kernel.SMOOTH, 0.4), (Kernel.RAMLAK, 0.4)):
        img = reconstruct(noisy, make_filter(kernel, f50, CFG.nyquist_cpmm), 0.5)
        nps = measure_nps([img])
        centers, prof = nps_radial_profile(nps)
        centroids[kernel] = float((centers * prof).sum() / prof.sum())
    assert centroids[Kernel.SMOOTH] < centroids[Kernel.RAMLAK]


def test_measure_nps_validates_inputs():
    with pytest.raises(MetricError, match="at least one"):
        measure_nps([])
    a = synthetic_image(np.zeros((64, 64)))
    b = synthetic_image(np.zeros((32, 32)))
    with pytest.raises(MetricError, match="geometry"):
        measure_nps([a, b])
    air = synthetic_image(np.full((64, 64), -1000.0))
    with pytest.raises(MetricError, match="ROI"):
        measure_nps([air])


# ---------------------------------------------------------------------------
# MTF


def test_measured_f50_matches_system_response(lesion_phantom, lesion_sino):
    # analytic chain: filter window x detector aperture x linear-interpolation
    # triangle; the edge estimator super-resolves across columns, so no pixel
    # aperture term
    disk = make_disk_phantom([(0.0, 0.0, 40.0)], fov_mm=120.0, spacing_mm=0.125)
    sino = forward_project(disk, 120, CFG)
    pitch = CFG.detector_pitch_mm
    for kernel, f50, px in (
        (Kernel.RAMLAK, 0.4, 0.5),
        (Kernel.SMOOTH, 0.6, 0.5),
        (Kernel.COSINE, 0.6, 1.0),
    ):
        filt = make_filter(kernel, f50, CFG.nyquist_cpmm)
        measured = measure_mtf(reconstruct(sino, filt, px), disk).f50

        def chain(f):
            return float(filt.window(f)) * np.sinc(f * pitch) ** 3 - 0.5

        predicted = brentq(chain, 1e-6, CFG.nyquist_cpmm - 1e-9)
        assert abs(measured - predicted) / predicted < 0.15


def test_f50_orders_with_filter_cutoff(lesion_phantom, lesion_sino):
    img = {
        f50: measure_mtf(
            reconstruct(lesion_sino, make_filter(Kernel.SMOOTH, f50, CFG.nyquist_cpmm), 0.5),
            lesion_phantom,
        ).f50
        for f50 in (0.4, 0.8)
    }
    assert img[0.4] < img[0.8]


def test_mtf_requires_visible_edge():
    img = synthetic_image(np.zeros((128, 128)))
    ph = make_disk_phantom([(0.0, 0.0, 40.0)], fov_mm=128.0, spacing_mm=0.5)
    with pytest.raises(MetricError, match="air"):
        measure_mtf(img, ph)


# ---------------------------------------------------------------------------
# lesion contrast / liver noise / CNR


def test_noiseless_lesion_contrast_near_nominal(lesion_phantom, lesion_sino):
    # nominal deficit is 30 HU at 120 kV; beam/kernel blur must stay within 3
    for kernel, f50 in ((Kernel.SMOOTH, 0.6), (Kernel.RAMLAK, 0.4)):
        img = reconstruct(lesion_sino, make_filter(kernel, f50, CFG.nyquist_cpmm), 0.5)
        rows = lesion_contrast(img, lesion_phantom)
        assert len(rows) == 1
        assert not rows[0]["used_fallback_mask"]
        assert rows[0]["contrast"] == pytest.approx(30.0, abs=3.0)


def test_lesion_contrast_reports_fallback_for_tiny_lesions():
    ph = generate(
        PatientAttrs(bmi=25.0, sex="M", patient_id="tiny-les"),
        1,
        13,
        fov_mm=120.0,
        spacing_mm=0.25,
    )
    assert ph.lesions[0].diameter_mm < 3.0  # smaller than the erosion margin
    sino = forward_project(ph, 120, CFG)
    img = reconstruct(sino, make_filter(Kernel.SMOOTH, 0.6, CFG.nyquist_cpmm), 1.0)
    rows = lesion_contrast(img, ph)
    assert rows[0]["used_fallback_mask"]
    assert rows[0]["contrast"] > 10.0  # blurred but still hypoattenuating


def test_liver_noise_increases_with_less_dose(lesion_phantom, lesion_sino):
    filt = make_filter(Kernel.SMOOTH, 0.6, CFG.nyquist_cpmm)
    lo = reconstruct(add_noise(lesion_sino, 150.0, seed=4), filt, 0.5)
    hi = reconstruct(add_noise(lesion_sino, 25.0, seed=4), filt, 0.5)
    assert liver_noise(hi, lesion_phantom) > liver_noise(lo, lesion_phantom)


def test_cnr_validates_noise():
    assert cnr(30.0, 10.0) == pytest.approx(3.0)
    with pytest.raises(MetricError):
        cnr(30.0, 0.0)


# ---------------------------------------------------------------------------
# detectability


def flat_mtf(fmax: float = 1.0) -> MtfCurve:
    f = np.linspace(0.0, fmax, 256)
    return MtfCurve(freqs=f, values=np.ones_like(f), f50=fmax / 2.0, fit_mode="synthetic")


def white_nps(level: float, fmax: float = 1.0, n: int = 65) -> NpsMap:
    f = np.linspace(-fmax, fmax, n)
    return NpsMap(grid=np.full((n, n), level), freqs=f, pixel_mm=0.5, n_rois=1)


def test_detectability_matches_closed_form_for_white_noise():
    # ideal system: d'^2 = C^2 * pi * d^2 / (4 * N0) once the task spectrum
    # is fully inside the integration band
    for c, d, n0 in ((10.0, 4.0, 25.0), (30.0, 2.0, 100.0), (5.0, 6.9, 10.0)):
        got = detectability(c, d, flat_mtf(4.0), white_nps(n0, fmax=4.0), grid_n=256)
        want = math.sqrt(c * c * math.pi * d * d / (4.0 * n0))
        assert got == pytest.approx(want, rel=0.02)


def test_detectability_validates_inputs():
    assert detectability(0.0, 4.0, flat_mtf(), white_nps(10.0)) == 0.0
    with pytest.raises(MetricError, match="diameter"):
        detectability(10.0, 0.0, flat_mtf(), white_nps(10.0))
    with pytest.raises(MetricError, match="degenerate"):
        detectability(10.0, 4.0, flat_mtf(), white_nps(0.0))


def test_detection_accuracy_reference_values():
    assert detection_accuracy(0.0) == 0.5
    assert detection_accuracy(3.0) == pytest.approx(0.98305, abs=1e-4)
    assert math.sqrt(2.0) * ndtri(0.99) == pytest.approx(3.28995, abs=1e-3)
    with pytest.raises(MetricError):
        detection_accuracy(-0.1)


@settings(max_examples=40, deadline=None)
@given(
    lo=st.floats(0.0, 6.0),
    delta=st.floats(0.0, 4.0),
)
def test_detection_accuracy_is_monotone(lo, delta):
    assert detection_accuracy(lo + delta) >= detection_accuracy(lo)


# ---------------------------------------------------------------------------
# composition


def test_full_report_composes_all_metrics(lesion_phantom):
    p = ProtocolParams(120, 80, Kernel.SMOOTH, 0.6, 0.5, 0.5)
    img = acquire_and_reconstruct(lesion_phantom, p, CFG, seed=6)
    report = full_report(img, lesion_phantom, roi_seed=1)
    assert len(report.lesions) == len(lesion_phantom.lesions)
    assert report.noise_index > 0
    assert report.mtf.f50 > 0
    les = report.lesions[0]
    assert les.d_prime > 0
    assert 0.5 < les.detection_accuracy < 1.0
    assert les.cnr == pytest.approx(les.contrast / report.noise_liver)

    rows = iq_report_rows(report, "iq")
    assert len(rows) == 1
    assert list(rows[0]) == IQ_CSV_COLUMNS
    assert rows[0]["params"] == p.to_text()
    assert rows[0]["patient_id"] == "iq"
