import time

import pytest
from hypothesis import given, strategies as st

from ct_protopt.protocol_space import (
    AXES,
    CARDINALITIES,
    F50_VALUES,
    N_CANONICAL_COMBINATIONS,
    N_RAW_COMBINATIONS,
    ActionVector,
    Kernel,
    ProtocolParams,
    decode,
    encode,
    enumerate_canonical,
    iter_raw_actions,
)


def test_cardinalities():
    assert CARDINALITIES == (3, 3, 5, 3, 2, 2)
    assert N_RAW_COMBINATIONS == 540
    assert N_CANONICAL_COMBINATIONS == 468


def test_enumeration_count_and_uniqueness():
    combos = enumerate_canonical()
    assert len(combos) == 468
    assert len({p.to_text() for p in combos}) == 468


def test_enumeration_is_fast():
    t0 = time.perf_counter()
    enumerate_canonical()
    assert time.perf_counter() - t0 < 1.0


def test_enumeration_order():
    # grouped by kV, then mAs -> kernel -> f50 -> pixel -> slice
    combos = enumerate_canonical()
    assert len([p for p in combos if p.tube_kv == 100]) == 156
    assert combos[0].to_text() == "kv=100,mas=25,kernel=ramlak,f50=0.4,slice=0.5,pixel=0.5"
    kvs = [p.tube_kv for p in combos]
    assert kvs == sorted(kvs)
    # within a kV block, mAs never decreases
    for kv in (100, 120, 140):
        mas = [p.tube_mas for p in combos if p.tube_kv == kv]
        assert mas == sorted(mas)


def test_ramlak_f50_collapses():
    a = ProtocolParams(120, 80, Kernel.RAMLAK, 0.8, 0.5, 0.5)
    b = ProtocolParams(120, 80, Kernel.RAMLAK, 0.4, 0.5, 0.5)
    assert a == b
    assert a.filter_f50 == F50_VALUES[0]


def test_off_grid_values_rejected():
    with pytest.raises(ValueError):
        ProtocolParams(110, 80, Kernel.SMOOTH, 0.6, 0.5, 0.5)
    with pytest.raises(ValueError):
        ProtocolParams(120, 80, Kernel.SMOOTH, 0.7, 0.5, 0.5)
    with pytest.raises(ValueError):
        ProtocolParams(120, 80, "smooth", 0.6, 0.5, 0.5)


def test_text_roundtrip_all_canonical():
    for p in enumerate_canonical():
        assert ProtocolParams.from_text(p.to_text()) == p


def test_from_text_rejects_malformed():
    with pytest.raises(ValueError):
        ProtocolParams.from_text("kv=120,mas=80")
    with pytest.raises(ValueError):
        ProtocolParams.from_text("kv=120,mas=80,kernel=boxcar,f50=0.6,slice=0.5,pixel=0.5")


@given(st.tuples(*(st.integers(0, c - 1) for c in CARDINALITIES)))
def test_decode_encode_roundtrip(idxs):
    p = decode(ActionVector(idxs))
    # encode is exact on canonical params; RamLak aliases collapse first
    assert decode(encode(p)) == p


def test_raw_action_count_and_canonical_cover():
    raws = list(iter_raw_actions())
    assert len(raws) == 540
    canon = {decode(a).to_text() for a in raws}
    assert canon == {p.to_text() for p in enumerate_canonical()}


def test_action_vector_validates_range():
    with pytest.raises(ValueError):
        ActionVector((0, 0, 5, 0, 0, 0))
    with pytest.raises(ValueError):
        ActionVector((0, 0, 0, 0, 0))


def test_axes_match_params_fields():
    names = [ax.name for ax in AXES]
    assert names == ["kv", "mas", "kernel", "f50", "slice", "pixel"]
