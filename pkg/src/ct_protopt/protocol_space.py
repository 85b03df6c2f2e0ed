"""The discrete CT protocol space: six parameter axes, canonical enumeration,
and the multi-discrete action encoding used by the optimizer.

The grid is 3 kV x 3 mAs x 5 kernels x 3 f50 x 2 slice x 2 pixel = 540 raw
combinations. The RamLak kernel is a pure ramp and ignores f50, so its three
f50 variants are one protocol; canonical form pins RamLak's f50 to 0.4, which
leaves 468 distinct protocols.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Sequence


class Kernel(Enum):
    RAMLAK = "ramlak"
    COSINE = "cosine"
    SMOOTH = "smooth"
    SHARP = "sharp"
    ENHANCING = "enhancing"

    def __str__(self) -> str:  # serialized form
        return self.value


KV_VALUES: tuple[int, ...] = (100, 120, 140)
MAS_VALUES: tuple[int, ...] = (25, 80, 150)
KERNEL_VALUES: tuple[Kernel, ...] = tuple(Kernel)
F50_VALUES: tuple[float, ...] = (0.4, 0.6, 0.8)
SLICE_VALUES: tuple[float, ...] = (0.5, 1.0)
PIXEL_VALUES: tuple[float, ...] = (0.5, 1.0)


@dataclass(frozen=True)
class ParamAxisInfo:
    name: str
    values: tuple

    @property
    def cardinality(self) -> int:
        return len(self.values)


# Axis order is fixed: action vectors index (kV, mAs, kernel, f50, slice, pixel).
AXES: tuple[ParamAxisInfo, ...] = (
    ParamAxisInfo("kv", KV_VALUES),
    ParamAxisInfo("mas", MAS_VALUES),
    ParamAxisInfo("kernel", KERNEL_VALUES),
    ParamAxisInfo("f50", F50_VALUES),
    ParamAxisInfo("slice", SLICE_VALUES),
    ParamAxisInfo("pixel", PIXEL_VALUES),
)

CARDINALITIES: tuple[int, ...] = tuple(ax.cardinality for ax in AXES)  # (3,3,5,3,2,2)

N_RAW_COMBINATIONS = 540
N_CANONICAL_COMBINATIONS = 468


def _check_member(name: str, value, values: Sequence) -> None:
    if value not in values:
        raise ValueError(f"{name}={value!r} is not in the protocol grid {values}")


@dataclass(frozen=True)
class ProtocolParams:
    """One point of the protocol grid, always stored in canonical form."""

    tube_kv: int
    tube_mas: int
    kernel: Kernel
    filter_f50: float
    slice_mm: float
    pixel_mm: float

    def __post_init__(self) -> None:
        _check_member("tube_kv", self.tube_kv, KV_VALUES)
        _check_member("tube_mas", self.tube_mas, MAS_VALUES)
        if not isinstance(self.kernel, Kernel):
            raise ValueError(f"kernel={self.kernel!r} is not a Kernel")
        _check_member("filter_f50", self.filter_f50, F50_VALUES)
        _check_member("slice_mm", self.slice_mm, SLICE_VALUES)
        _check_member("pixel_mm", self.pixel_mm, PIXEL_VALUES)
        if self.kernel is Kernel.RAMLAK and self.filter_f50 != F50_VALUES[0]:
            # RamLak is f50-independent; canonical form pins it to the lowest value.
            object.__setattr__(self, "filter_f50", F50_VALUES[0])

    def to_text(self) -> str:
        return (
            f"kv={self.tube_kv},mas={self.tube_mas},kernel={self.kernel.value},"
            f"f50={self.filter_f50},slice={self.slice_mm},pixel={self.pixel_mm}"
        )

    @classmethod
    def from_text(cls, text: str) -> "ProtocolParams":
        fields: dict[str, str] = {}
        for part in text.strip().split(","):
            key, sep, raw = part.partition("=")
            if not sep:
                raise ValueError(f"malformed protocol field {part!r} in {text!r}")
            fields[key.strip()] = raw.strip()
        expected = {"kv", "mas", "kernel", "f50", "slice", "pixel"}
        if set(fields) != expected:
            raise ValueError(f"protocol text needs keys {sorted(expected)}, got {sorted(fields)}")
        try:
            kernel = Kernel(fields["kernel"])
        except ValueError:
            raise ValueError(f"unknown kernel {fields['kernel']!r}") from None
        return cls(
            tube_kv=int(fields["kv"]),
            tube_mas=int(fields["mas"]),
            kernel=kernel,
            filter_f50=float(fields["f50"]),
            slice_mm=float(fields["slice"]),
            pixel_mm=float(fields["pixel"]),
        )

    @property
    def axis_values(self) -> tuple:
        return (
            self.tube_kv,
            self.tube_mas,
            self.kernel,
            self.filter_f50,
            self.slice_mm,
            self.pixel_mm,
        )


@dataclass(frozen=True)
class ActionVector:
    """Per-axis indices of a protocol choice; the optimizer's action type."""

    indices: tuple[int, int, int, int, int, int]

    def __post_init__(self) -> None:
        if len(self.indices) != len(AXES):
            raise ValueError(f"action needs {len(AXES)} indices, got {len(self.indices)}")
        for idx, ax in zip(self.indices, AXES):
            if not 0 <= int(idx) < ax.cardinality:
                raise ValueError(f"axis {ax.name}: index {idx} out of range [0, {ax.cardinality})")
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))


def encode(p: ProtocolParams) -> ActionVector:
    """Per-axis index of each field value (canonical params only)."""
    return ActionVector(tuple(ax.values.index(v) for ax, v in zip(AXES, p.axis_values)))


def decode(a: ActionVector | Sequence[int]) -> ProtocolParams:
    """Inverse of encode; non-canonical RamLak f50 indices collapse to f50=0.4."""
    if not isinstance(a, ActionVector):
        a = ActionVector(tuple(a))
    vals = [ax.values[i] for ax, i in zip(AXES, a.indices)]
    return ProtocolParams(
        tube_kv=vals[0],
        tube_mas=vals[1],
        kernel=vals[2],
        filter_f50=vals[3],
        slice_mm=vals[4],
        pixel_mm=vals[5],
    )


def enumerate_canonical() -> list[ProtocolParams]:
    """Every canonical protocol exactly once, in the reporting order: grouped by
    kV, then nested mAs -> kernel -> f50 -> pixel (matrix size) -> slice."""
    out: list[ProtocolParams] = []
    seen: set[ProtocolParams] = set()
    for kv in KV_VALUES:
        for mas in MAS_VALUES:
            for kernel in KERNEL_VALUES:
                for f50 in F50_VALUES:
                    for pixel in PIXEL_VALUES:
                        for slc in SLICE_VALUES:
                            p = ProtocolParams(kv, mas, kernel, f50, slc, pixel)
                            if p not in seen:
                                seen.add(p)
                                out.append(p)
    return out


def iter_raw_actions() -> Iterator[ActionVector]:
    """All 540 raw index tuples, including RamLak's collapsed f50 duplicates."""
    for idx in itertools.product(*(range(c) for c in CARDINALITIES)):
        yield ActionVector(idx)
