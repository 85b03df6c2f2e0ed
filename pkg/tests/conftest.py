"""Shared fixtures.

The expensive inputs are session-scoped and sized for a single core. Two
scan geometries are used: a full-size patient geometry with a reduced view
count for optimizer training runs (small fields of view distort the body
model, and too few views bury the protocol landscape in aliasing noise),
and a deliberately tiny geometry for determinism checks where image quality
is irrelevant.
"""

from __future__ import annotations

import pytest

from ct_protopt.optimizer import exhaustive_search
from ct_protopt.phantom import PatientAttrs, generate, make_disk_phantom
from ct_protopt.vct_engine import ScannerConfig, forward_project

# training geometry: real 360 mm body field of view, view count cut to the
# smallest value whose sweep landscape the agent reliably solves
TRAINING_CFG = ScannerConfig(n_views=288)
TRAINING_SPECS = (
    ("tr-lean", 21.0, "F", 1),
    ("tr-mid", 26.5, "M", 2),
    ("tr-heavy", 32.0, "M", 3),
)
TRAINING_GEN_SEED = 29
TRAINING_SWEEP_SEED = 11

# determinism geometry: small and fast, accuracy not a goal
DETERMINISM_CFG = ScannerConfig(n_views=60, n_detectors=352, fov_mm=120.0)


def make_training_phantom(pid: str, bmi: float, sex: str, n_lesions: int):
    attrs = PatientAttrs(bmi=bmi, sex=sex, patient_id=pid)
    return generate(attrs, n_lesions, TRAINING_GEN_SEED, spacing_mm=0.5)


@pytest.fixture(scope="session")
def training_phantoms():
    return [make_training_phantom(*spec) for spec in TRAINING_SPECS]


@pytest.fixture(scope="session")
def training_tables(training_phantoms):
    """Exhaustive sweep of each training phantom; the optimizer oracle.
    Costs a few minutes per phantom."""
    return {
        ph.attrs.patient_id: exhaustive_search(ph, TRAINING_CFG, TRAINING_SWEEP_SEED)
        for ph in training_phantoms
    }


@pytest.fixture(scope="session")
def determinism_phantom():
    attrs = PatientAttrs(bmi=27.0, sex="F", patient_id="determinism")
    return generate(attrs, 2, 17, fov_mm=120.0, spacing_mm=0.5)


@pytest.fixture(scope="session")
def water_cylinder():
    """150 mm water cylinder with a 200 mm display FOV: every reconstructed
    pixel is interior water, so noise statistics carry no edge structure."""
    ph = make_disk_phantom([(0.0, 0.0, 150.0)], fov_mm=360.0, spacing_mm=0.25)
    cfg = ScannerConfig(fov_mm=200.0)
    sino = forward_project(ph, 120, cfg)
    return ph, cfg, sino
