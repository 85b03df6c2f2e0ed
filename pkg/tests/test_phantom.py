import io

import numpy as np
import pytest

from ct_protopt.phantom import (
    AIR,
    LESION_BASE,
    LIVER,
    Lesion,
    MaterialTable,
    PatientAttrs,
    PhantomGenerationError,
    body_semi_axes,
    cohort,
    generate,
    make_disk_phantom,
    read_phantom,
    write_phantom,
)

ATTRS = PatientAttrs(bmi=27.0, sex="M", patient_id="t1")


def test_generate_deterministic():
    a = generate(ATTRS, 3, 42, fov_mm=120.0, spacing_mm=0.25)
    b = generate(ATTRS, 3, 42, fov_mm=120.0, spacing_mm=0.25)
    assert np.array_equal(a.grid, b.grid)
    assert a.lesions == b.lesions


def test_generate_seed_sensitivity():
    a = generate(ATTRS, 3, 42, fov_mm=120.0, spacing_mm=0.25)
    b = generate(ATTRS, 3, 43, fov_mm=120.0, spacing_mm=0.25)
    assert not np.array_equal(a.grid, b.grid)


def test_lesions_inside_liver_and_disjoint():
    ph = generate(ATTRS, 4, 7, fov_mm=180.0, spacing_mm=0.25)
    assert len(ph.lesions) == 4
    for k, les in enumerate(ph.lesions):
        lo, hi = 2.0, 6.9
        assert lo <= les.diameter_mm <= hi
        mask = ph.lesion_mask(k)
        assert mask.any()
        # rasterized lesion pixels never leak outside the liver+lesion region
        outside = mask & (ph.grid == AIR)
        assert not outside.any()
    # labels distinct per lesion
    labels = set(np.unique(ph.grid))
    for k in range(4):
        assert LESION_BASE + k in labels


def test_lesion_area_matches_diameter():
    ph = generate(ATTRS, 2, 3, fov_mm=120.0, spacing_mm=0.125)
    for k, les in enumerate(ph.lesions):
        area_mm2 = ph.lesion_mask(k).sum() * ph.spacing_mm**2
        want = np.pi * (les.diameter_mm / 2.0) ** 2
        assert abs(area_mm2 / want - 1.0) < 0.08


def test_generate_rejects_bad_lesion_count():
    with pytest.raises(ValueError):
        generate(ATTRS, 0, 1)
    with pytest.raises(ValueError):
        generate(ATTRS, 7, 1)


def test_generation_failure_is_structured():
    # a liver this small cannot host six lesions
    small = PatientAttrs(bmi=16.0, sex="F", patient_id="t2")
    with pytest.raises(PhantomGenerationError):
        generate(small, 6, 1, fov_mm=40.0, spacing_mm=0.25)


def test_body_grows_with_bmi():
    a_lo = body_semi_axes(20.0, 500.0)
    a_hi = body_semi_axes(35.0, 500.0)
    assert a_hi[0] > a_lo[0] and a_hi[1] > a_lo[1]


def test_cohort_ids_and_determinism():
    m1 = cohort(3, 5, fov_mm=120.0, spacing_mm=0.5)
    m2 = cohort(3, 5, fov_mm=120.0, spacing_mm=0.5)
    assert [a.patient_id for a, _ in m1] == ["p000", "p001", "p002"]
    for (a1, p1), (a2, p2) in zip(m1, m2):
        assert a1 == a2
        assert np.array_equal(p1.grid, p2.grid)
    bmis = {a.bmi for a, _ in m1}
    assert len(bmis) == 3  # members differ


def test_file_roundtrip_bit_exact():
    ph = generate(ATTRS, 3, 42, fov_mm=120.0, spacing_mm=0.25)
    buf = io.BytesIO()
    write_phantom(ph, buf)
    buf.seek(0)
    back = read_phantom(buf)
    assert np.array_equal(back.grid, ph.grid)
    assert back.attrs == ph.attrs
    assert back.lesions == ph.lesions
    assert back.spacing_mm == ph.spacing_mm
    assert back.fov_mm == ph.fov_mm
    assert back.body_ab == ph.body_ab


def test_read_rejects_garbage():
    with pytest.raises(ValueError):
        read_phantom(io.BytesIO(b"not a phantom"))


def test_disk_phantom_geometry():
    ph = make_disk_phantom([(0.0, 0.0, 50.0)], fov_mm=120.0, spacing_mm=0.5)
    area = ph.body_mask().sum() * ph.spacing_mm**2
    assert abs(area / (np.pi * 50.0**2) - 1.0) < 0.01
    assert not ph.lesions


def test_material_table_contrast_ordering():
    mt = MaterialTable()
    # liver excess and lesion deficit both shrink with kV
    hu_liver = {kv: mt.hu(mt.mu_liver(kv), kv) for kv in (100, 120, 140)}
    assert hu_liver[100] > hu_liver[120] > hu_liver[140]
    deficit = {
        kv: mt.hu(mt.mu_liver(kv), kv) - mt.hu(mt.mu_lesion(kv, 30.0), kv)
        for kv in (100, 120, 140)
    }
    assert deficit[100] > deficit[120] > deficit[140]
    assert abs(deficit[120] - 30.0) < 1e-9


def test_material_table_water_is_zero_hu():
    mt = MaterialTable()
    for kv in (100, 120, 140):
        assert mt.hu(mt.mu_water(kv), kv) == 0.0


def test_material_table_rejects_unknown_kv():
    with pytest.raises(ValueError):
        MaterialTable().mu_water(90)


def test_lesion_validation():
    with pytest.raises(ValueError):
        Lesion(center=(0.0, 0.0), diameter_mm=1.0, contrast_class=30.0)
    with pytest.raises(ValueError):
        Lesion(center=(0.0, 0.0), diameter_mm=4.0, contrast_class=-5.0)


def test_attrs_validation():
    with pytest.raises(ValueError):
        PatientAttrs(bmi=25.0, sex="X", patient_id="z")
    with pytest.raises(ValueError):
        PatientAttrs(bmi=-1.0, sex="F", patient_id="z")
