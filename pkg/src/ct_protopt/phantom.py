"""Procedural 2D patient phantoms for the virtual imaging trial.

A phantom is a fine label raster (air / soft tissue / liver / per-lesion
labels) plus the ground truth needed by the metrics: lesion list, body
geometry, patient attributes. The body is an ellipse whose semi-axes scale
affinely with BMI; the liver is a fixed ellipse in the body's upper-right
quadrant (~18% of body area); lesions are hypoattenuating disks placed
randomly inside the liver without overlap.

Attenuation is monochromatic per tube potential via MaterialTable: water mu
per kV with liver at +55 HU (scaled by a per-kV contrast factor) and lesions
a contrast_class HU deficit below liver, also kV-scaled, so the liver-lesion
contrast strictly decreases from 100 to 140 kV.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from ._seeds import derive_seed, philox

# material labels in the raster
AIR = 0
SOFT_TISSUE = 1
LIVER = 2
LESION_BASE = 3  # lesion k -> label LESION_BASE + k

_BODY_A0, _BODY_A_SLOPE = 140.0, 4.5  # lateral semi-axis mm at BMI 20, mm per BMI
_BODY_B0, _BODY_B_SLOPE = 95.0, 3.0  # AP semi-axis
_BODY_MARGIN_MM = 6.0  # guaranteed air ring inside the FOV

_LIVER_CENTER_FRAC = (0.35, 0.28)  # of body semi-axes, upper-right quadrant
_LIVER_AXES_FRAC = (0.55, 0.33)

LESION_DIAMETER_RANGE = (2.0, 6.9)
DEFAULT_LESION_CONTRAST = 30.0  # HU deficit at 120 kV
DEFAULT_SPACING_MM = 0.125
DEFAULT_FOV_MM = 360.0


class PhantomGenerationError(RuntimeError):
    """Lesion placement failed after bounded retries."""


@dataclass(frozen=True)
class PatientAttrs:
    bmi: float
    sex: str  # "M" or "F"
    patient_id: str

    def __post_init__(self) -> None:
        if self.sex not in ("M", "F"):
            raise ValueError(f"sex must be 'M' or 'F', got {self.sex!r}")
        if not self.bmi > 0:
            raise ValueError(f"bmi must be positive, got {self.bmi}")


@dataclass(frozen=True)
class Lesion:
    center: tuple[float, float]  # mm, phantom coordinates (0,0 = FOV center)
    diameter_mm: float
    contrast_class: float  # nominal HU deficit at 120 kV

    def __post_init__(self) -> None:
        lo, hi = LESION_DIAMETER_RANGE
        if not lo <= self.diameter_mm <= hi:
            raise ValueError(f"lesion diameter {self.diameter_mm} outside [{lo}, {hi}] mm")
        if not self.contrast_class > 0:
            raise ValueError("contrast_class must be positive (hypoattenuating lesion)")


@dataclass(frozen=True, eq=False)
class Phantom:
    grid: np.ndarray  # (n, n) uint8 material labels, row-major, y then x
    spacing_mm: float
    attrs: PatientAttrs
    lesions: tuple[Lesion, ...]
    fov_mm: float
    body_ab: tuple[float, float]  # body ellipse semi-axes (a lateral/x, b AP/y) mm

    @property
    def n(self) -> int:
        return self.grid.shape[0]

    def coords_mm(self) -> tuple[np.ndarray, np.ndarray]:
        """Voxel-center coordinates: x (1, n) and y (n, 1) for broadcasting."""
        n = self.n
        c = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
        return (c * self.spacing_mm)[None, :], (c * self.spacing_mm)[:, None]

    def body_mask(self) -> np.ndarray:
        return self.grid != AIR

    def liver_mask(self) -> np.ndarray:
        """Liver parenchyma only (lesions excluded)."""
        return self.grid == LIVER

    def lesion_mask(self, k: int) -> np.ndarray:
        if not 0 <= k < len(self.lesions):
            raise ValueError(f"lesion index {k} out of range")
        return self.grid == LESION_BASE + k


@dataclass(frozen=True)
class MaterialTable:
    """Linear attenuation (1/mm) per material and tube potential."""

    water_mu: dict[int, float] = field(
        default_factory=lambda: {100: 0.0171, 120: 0.0161, 140: 0.0154}
    )
    liver_hu_at_unit_factor: float = 55.0
    # per-kV contrast scale: both liver excess and lesion deficit shrink with kV
    contrast_factor: dict[int, float] = field(
        default_factory=lambda: {100: 1.25, 120: 1.00, 140: 0.85}
    )

    def _check_kv(self, kv: int) -> None:
        if kv not in self.water_mu:
            raise ValueError(f"kv={kv} not in material table {sorted(self.water_mu)}")

    def mu_water(self, kv: int) -> float:
        self._check_kv(kv)
        return self.water_mu[kv]

    def mu_liver(self, kv: int) -> float:
        self._check_kv(kv)
        c = self.contrast_factor[kv]
        return self.water_mu[kv] * (1.0 + self.liver_hu_at_unit_factor * c / 1000.0)

    def mu_lesion(self, kv: int, contrast_class: float) -> float:
        self._check_kv(kv)
        deficit_hu = contrast_class * self.contrast_factor[kv]
        return self.mu_liver(kv) - deficit_hu * self.water_mu[kv] / 1000.0

    def hu(self, mu: np.ndarray | float, kv: int):
        w = self.mu_water(kv)
        return 1000.0 * (mu - w) / w


def body_semi_axes(bmi: float, fov_mm: float) -> tuple[float, float]:
    """Affine BMI scaling of the body ellipse, clamped to leave an air ring."""
    lim = fov_mm / 2.0 - _BODY_MARGIN_MM
    a = min(_BODY_A0 + _BODY_A_SLOPE * (bmi - 20.0), lim)
    b = min(_BODY_B0 + _BODY_B_SLOPE * (bmi - 20.0), lim)
    return a, b


def _liver_geometry(a: float, b: float):
    cx = _LIVER_CENTER_FRAC[0] * a
    cy = _LIVER_CENTER_FRAC[1] * b
    la = _LIVER_AXES_FRAC[0] * a
    lb = _LIVER_AXES_FRAC[1] * b
    return cx, cy, la, lb


def generate(
    attrs: PatientAttrs,
    n_lesions: int,
    seed: int,
    *,
    fov_mm: float = DEFAULT_FOV_MM,
    spacing_mm: float = DEFAULT_SPACING_MM,
    contrast_class: float = DEFAULT_LESION_CONTRAST,
) -> Phantom:
    """Deterministic phantom for (attrs, n_lesions, seed).

    Lesion diameters are uniform in [2.0, 6.9] mm; centers are rejection
    sampled so every disk lies strictly inside the liver and clear of the
    other lesions. Bounded retries; raises PhantomGenerationError with a
    diagnostic when the liver cannot host the request.
    """
    if not 1 <= n_lesions <= 6:
        raise ValueError(f"n_lesions must be in [1, 6], got {n_lesions}")
    rng = philox("phantom", attrs.patient_id, attrs.bmi, attrs.sex, n_lesions, seed)

    a, b = body_semi_axes(attrs.bmi, fov_mm)
    cx, cy, la, lb = _liver_geometry(a, b)
    margin = 2.0 * spacing_mm

    lesions: tuple[Lesion, ...] = ()
    for round_idx in range(20):
        diameters = rng.uniform(*LESION_DIAMETER_RANGE, size=n_lesions)
        placed: list[Lesion] = []
        ok = True
        for d in diameters:
            r = d / 2.0
            ea, eb = la - r - margin, lb - r - margin
            if ea <= 0 or eb <= 0:
                ok = False
                break
            for _ in range(500):
                x = cx + rng.uniform(-ea, ea)
                y = cy + rng.uniform(-eb, eb)
                if ((x - cx) / ea) ** 2 + ((y - cy) / eb) ** 2 > 1.0:
                    continue
                if all(
                    np.hypot(x - q.center[0], y - q.center[1])
                    >= r + q.diameter_mm / 2.0 + margin
                    for q in placed
                ):
                    placed.append(Lesion((x, y), float(d), contrast_class))
                    break
            else:
                ok = False
                break
        if ok:
            lesions = tuple(placed)
            break
    else:
        raise PhantomGenerationError(
            f"could not place {n_lesions} lesions in liver (semi-axes "
            f"{la:.1f}x{lb:.1f} mm) after 20 rounds x 500 attempts"
        )

    n = int(round(fov_mm / spacing_mm))
    c = (np.arange(n, dtype=np.float64) - (n - 1) / 2.0) * spacing_mm
    x, y = c[None, :], c[:, None]

    labels = np.zeros((n, n), dtype=np.uint8)
    body = (x / a) ** 2 + (y / b) ** 2 <= 1.0
    labels[body] = SOFT_TISSUE
    liver = (x - cx) ** 2 / la**2 + (y - cy) ** 2 / lb**2 <= 1.0
    labels[liver] = LIVER
    for k, les in enumerate(lesions):
        lx, ly = les.center
        disk = (x - lx) ** 2 + (y - ly) ** 2 <= (les.diameter_mm / 2.0) ** 2
        labels[disk] = LESION_BASE + k

    return Phantom(
        grid=labels,
        spacing_mm=spacing_mm,
        attrs=attrs,
        lesions=lesions,
        fov_mm=fov_mm,
        body_ab=(a, b),
    )


def mu_image(ph: Phantom, kv: int, materials: MaterialTable | None = None) -> np.ndarray:
    """Attenuation raster (1/mm, float32) for a tube potential."""
    mt = materials or MaterialTable()
    max_label = LESION_BASE + len(ph.lesions) - 1 if ph.lesions else LIVER
    if int(ph.grid.max()) > max_label:
        raise ValueError(
            f"unknown material label {int(ph.grid.max())} (phantom has {len(ph.lesions)} lesions)"
        )
    lut = np.zeros(max_label + 1, dtype=np.float32)
    lut[AIR] = 0.0
    lut[SOFT_TISSUE] = mt.mu_water(kv)
    lut[LIVER] = mt.mu_liver(kv)
    for k, les in enumerate(ph.lesions):
        lut[LESION_BASE + k] = mt.mu_lesion(kv, les.contrast_class)
    return lut[ph.grid]


def hu_image(ph: Phantom, kv: int, materials: MaterialTable | None = None) -> np.ndarray:
    """Ground-truth HU raster: 1000·(mu − mu_water)/mu_water per voxel."""
    mt = materials or MaterialTable()
    return mt.hu(mu_image(ph, kv, mt).astype(np.float64), kv)


def cohort(
    n: int,
    seed: int,
    *,
    fov_mm: float = DEFAULT_FOV_MM,
    spacing_mm: float = DEFAULT_SPACING_MM,
) -> list[tuple[PatientAttrs, Phantom]]:
    """Generate n patients: BMI ~ clamped normal(26.5, 5.7), sex drawn 9:5 M:F,
    1-6 lesions each."""
    if n < 1:
        raise ValueError("cohort size must be >= 1")
    rng = philox("cohort", seed)
    out = []
    for i in range(n):
        bmi = float(np.clip(rng.normal(26.5, 5.7), 15.0, 50.0))
        sex = "M" if rng.random() < 9.0 / 14.0 else "F"
        attrs = PatientAttrs(bmi=bmi, sex=sex, patient_id=f"p{i:03d}")
        n_lesions = int(rng.integers(1, 7))
        ph = generate(
            attrs,
            n_lesions,
            derive_seed("cohort-member", seed, i),
            fov_mm=fov_mm,
            spacing_mm=spacing_mm,
        )
        out.append((attrs, ph))
    return out


def make_disk_phantom(
    disks: Sequence[tuple[float, float, float]],
    *,
    fov_mm: float = DEFAULT_FOV_MM,
    spacing_mm: float = 0.25,
    patient_id: str = "disk",
) -> Phantom:
    """Water-equivalent disk phantom(s) for calibration and oracle tests.

    disks: list of (center_x_mm, center_y_mm, radius_mm), all SOFT_TISSUE.
    """
    n = int(round(fov_mm / spacing_mm))
    c = (np.arange(n, dtype=np.float64) - (n - 1) / 2.0) * spacing_mm
    x, y = c[None, :], c[:, None]
    labels = np.zeros((n, n), dtype=np.uint8)
    rmax = 0.0
    for cx, cy, r in disks:
        labels[(x - cx) ** 2 + (y - cy) ** 2 <= r * r] = SOFT_TISSUE
        rmax = max(rmax, float(np.hypot(cx, cy)) + r)
    attrs = PatientAttrs(bmi=25.0, sex="F", patient_id=patient_id)
    return Phantom(
        grid=labels,
        spacing_mm=spacing_mm,
        attrs=attrs,
        lesions=(),
        fov_mm=fov_mm,
        body_ab=(rmax, rmax),
    )


# ---------------------------------------------------------------------------
# file format: text header + row-major uint8 raster

_MAGIC = "CTPH1"


def write_phantom(ph: Phantom, f: BinaryIO) -> None:
    lines = [
        _MAGIC,
        f"fov_mm={ph.fov_mm!r}",
        f"spacing_mm={ph.spacing_mm!r}",
        f"n={ph.n}",
        f"patient_id={ph.attrs.patient_id}",
        f"bmi={ph.attrs.bmi!r}",
        f"sex={ph.attrs.sex}",
        f"body_a={ph.body_ab[0]!r}",
        f"body_b={ph.body_ab[1]!r}",
        f"n_lesions={len(ph.lesions)}",
    ]
    for k, les in enumerate(ph.lesions):
        lines.append(
            f"lesion={k},{les.center[0]!r},{les.center[1]!r},"
            f"{les.diameter_mm!r},{les.contrast_class!r}"
        )
    lines.append("end")
    f.write(("\n".join(lines) + "\n").encode("ascii"))
    f.write(np.ascontiguousarray(ph.grid, dtype=np.uint8).tobytes())


def read_phantom(f: BinaryIO) -> Phantom:
    header: dict[str, str] = {}
    lesion_lines: list[str] = []
    first = f.readline().decode("ascii").strip()
    if first != _MAGIC:
        raise ValueError(f"not a phantom file (magic {first!r})")
    while True:
        line = f.readline().decode("ascii").strip()
        if line == "end":
            break
        if not line:
            raise ValueError("truncated phantom header")
        key, _, val = line.partition("=")
        if key == "lesion":
            lesion_lines.append(val)
        else:
            header[key] = val
    n = int(header["n"])
    raster = np.frombuffer(f.read(n * n), dtype=np.uint8).reshape(n, n).copy()
    lesions = []
    for val in lesion_lines:
        _, cx, cy, d, cc = val.split(",")
        lesions.append(Lesion((float(cx), float(cy)), float(d), float(cc)))
    if len(lesions) != int(header["n_lesions"]):
        raise ValueError("lesion count mismatch in phantom header")
    attrs = PatientAttrs(
        bmi=float(header["bmi"]), sex=header["sex"], patient_id=header["patient_id"]
    )
    return Phantom(
        grid=raster,
        spacing_mm=float(header["spacing_mm"]),
        attrs=attrs,
        lesions=tuple(lesions),
        fov_mm=float(header["fov_mm"]),
        body_ab=(float(header["body_a"]), float(header["body_b"])),
    )
