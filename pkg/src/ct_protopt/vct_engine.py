"""Virtual CT acquisition and reconstruction.

Acquisition is a parallel-beam Radon transform of the phantom's attenuation
raster: for each of n_views angles over 180 degrees and each detector element,
the line integral of mu (1/mm) is computed by ray marching with step <=
spacing/2 and bilinear sampling. Quantum noise is injected pre-log: the
transmitted count per element is Poisson with mean N0*exp(-p), N0 = alpha*mAs
(flux is kV-independent per mAs by construction), and the noisy line integral
is -ln(max(count,1)/N0).

Reconstruction is filtered back projection: each view is zero-padded to >= 2x
the detector count, multiplied in the frequency domain by an apodized ramp
W(f) = |f|*window(f), inverse transformed, and back projected with linear
interpolation onto a matrix = fov/pixel grid scaled by delta_theta; mu is then
converted to HU with mu_water at the acquisition kV. Slice thickness is
simulated by averaging k = slice_mm/0.5 reconstructions of independently
noised sinograms.

Kernel windows (f50 = frequency where the closing windows reach 50%):

    RamLak     |f|                                 (f50-independent)
    Cosine     |f| * cos(pi*f/(2*fc)),  fc = 1.5*f50, zero beyond fc
    Smooth     |f| * 0.5*(1+cos(pi*f/fc)), fc = 2*f50, zero beyond fc (Hann)
    Sharp      |f| * (1 + 0.35*f/fc),   fc = 2*f50, support to Nyquist
    Enhancing  |f| * (1 + 0.8*sin(pi*f/fc)), fc = 4*f50, support to Nyquist

The two boost windows stay >= 1 across the band for every grid f50, so their
reconstructions are never softer than RamLak's; the two closing windows are
strictly softer. W(0) = 0 always; the reconstruction quadrature assigns the
DC frequency bin its exact |f|-integral weight df/4 so that large uniform
objects reconstruct without cupping (see reconstruct()).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np
import scipy.fft
from numba import njit

from ._seeds import derive_seed, philox
from .phantom import MaterialTable, Phantom, mu_image
from .protocol_space import Kernel, ProtocolParams

DEFAULT_N_VIEWS = 720
DEFAULT_N_DETECTORS = 1024
DEFAULT_DETECTOR_PITCH_MM = 0.5
DEFAULT_FOV_MM = 360.0
DEFAULT_FLUX_PER_MAS = 400.0

BASE_SLICE_MM = 0.5  # one noise realization per half-millimeter of slice


@dataclass(frozen=True)
class ScannerConfig:
    n_views: int = DEFAULT_N_VIEWS
    n_detectors: int = DEFAULT_N_DETECTORS
    detector_pitch_mm: float = DEFAULT_DETECTOR_PITCH_MM
    fov_mm: float = DEFAULT_FOV_MM
    flux_per_mas: float = DEFAULT_FLUX_PER_MAS

    def __post_init__(self) -> None:
        if self.n_views < 1 or self.n_detectors < 2:
            raise ValueError("scanner needs >= 1 view and >= 2 detectors")
        if self.flux_per_mas <= 0:
            raise ValueError("flux_per_mas must be positive")
        diag = self.fov_mm * math.sqrt(2.0)
        if self.n_detectors * self.detector_pitch_mm < diag:
            raise ValueError(
                f"detector bank {self.n_detectors}x{self.detector_pitch_mm} mm covers "
                f"{self.n_detectors * self.detector_pitch_mm:.1f} mm < FOV diagonal {diag:.1f} mm"
            )

    @property
    def nyquist_cpmm(self) -> float:
        return 1.0 / (2.0 * self.detector_pitch_mm)


@dataclass(frozen=True, eq=False)
class Sinogram:
    data: np.ndarray  # (n_views, n_detectors) line integrals, mu*mm
    kv: int
    mas: float | None  # None while noiseless
    noise_realization_seed: int | None
    detector_pitch_mm: float
    fov_mm: float
    flux_per_mas: float
    meta: dict = field(default_factory=dict)

    @property
    def n_views(self) -> int:
        return self.data.shape[0]

    @property
    def n_detectors(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class FilterSpec:
    kernel: Kernel
    f50: float
    nyquist_cpmm: float

    def window(self, f) -> np.ndarray:
        """Apodization A(f) with A(0)=1; response = |f|*A(f) inside the band."""
        f = np.abs(np.asarray(f, dtype=np.float64))
        k, f50 = self.kernel, self.f50
        if k is Kernel.RAMLAK:
            w = np.ones_like(f)
        elif k is Kernel.COSINE:
            fc = 1.5 * f50
            w = np.where(f <= fc, np.cos(np.pi * f / (2.0 * fc)), 0.0)
        elif k is Kernel.SMOOTH:
            fc = 2.0 * f50
            w = np.where(f <= fc, 0.5 * (1.0 + np.cos(np.pi * f / fc)), 0.0)
        elif k is Kernel.SHARP:
            fc = 2.0 * f50
            w = 1.0 + 0.35 * f / fc
        elif k is Kernel.ENHANCING:
            fc = 4.0 * f50
            w = 1.0 + 0.8 * np.sin(np.pi * f / fc)
        else:  # pragma: no cover
            raise ValueError(f"unknown kernel {k}")
        return np.where(f <= self.nyquist_cpmm, w, 0.0)

    def response(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        return np.abs(f) * self.window(f)


def make_filter(kernel: Kernel, f50: float, nyquist_cpmm: float) -> FilterSpec:
    if not isinstance(kernel, Kernel):
        raise ValueError(f"kernel must be a Kernel, got {kernel!r}")
    if f50 >= nyquist_cpmm:
        raise ValueError(f"f50 {f50} c/mm must lie below Nyquist {nyquist_cpmm} c/mm")
    if f50 <= 0:
        raise ValueError("f50 must be positive")
    return FilterSpec(kernel=kernel, f50=f50, nyquist_cpmm=nyquist_cpmm)


@dataclass(frozen=True, eq=False)
class ReconImage:
    pixels: np.ndarray  # (matrix, matrix) HU, float32
    pixel_mm: float
    slice_mm: float
    params: ProtocolParams | None
    provenance: dict = field(default_factory=dict)

    @property
    def matrix(self) -> int:
        return self.pixels.shape[0]


# ---------------------------------------------------------------------------
# hot loops (single-threaded on purpose: results must not depend on thread
# count; the sweep harness parallelizes across processes instead)


@njit(cache=True)
def _march(mu, spacing, cosv, sinv, n_det, pitch, step, rmax):
    nv = cosv.shape[0]
    n = mu.shape[0]
    cg = (n - 1) / 2.0
    inv_sp = 1.0 / spacing
    sino = np.zeros((nv, n_det), dtype=np.float64)
    for v in range(nv):
        c = cosv[v]
        s = sinv[v]
        for d in range(n_det):
            t = (d - (n_det - 1) / 2.0) * pitch
            if abs(t) >= rmax:
                continue
            half = np.sqrt(rmax * rmax - t * t)
            ns = int(np.ceil(2.0 * half / step))
            h = 2.0 * half / ns
            s0 = -half + 0.5 * h
            x = (t * c - s0 * s) * inv_sp + cg
            y = (t * s + s0 * c) * inv_sp + cg
            dx = -h * s * inv_sp
            dy = h * c * inv_sp
            acc = 0.0
            for _ in range(ns):
                ix = int(x)
                iy = int(y)
                if 0 <= ix < n - 1 and 0 <= iy < n - 1:
                    fx = x - ix
                    fy = y - iy
                    top = mu[iy, ix] * (1.0 - fx) + mu[iy, ix + 1] * fx
                    bot = mu[iy + 1, ix] * (1.0 - fx) + mu[iy + 1, ix + 1] * fx
                    acc += top * (1.0 - fy) + bot * fy
                x += dx
                y += dy
            sino[v, d] = acc * h
    return sino


@njit(cache=True)
def _backproject(q, cosv, sinv, inv_pitch, cdet, matrix, pixel):
    nv = cosv.shape[0]
    nq = q.shape[1]
    out = np.empty((matrix, matrix), dtype=np.float32)
    acc = np.zeros(matrix, dtype=np.float32)
    x0 = -(matrix - 1) / 2.0 * pixel
    for iy in range(matrix):
        y = (iy - (matrix - 1) / 2.0) * pixel
        for k in range(matrix):
            acc[k] = 0.0
        for v in range(nv):
            c = cosv[v]
            s = sinv[v]
            pos = (x0 * c + y * s) * inv_pitch + cdet
            dpos = pixel * c * inv_pitch
            row = q[v]
            for ix in range(matrix):
                i0 = int(np.floor(pos))
                if 0 <= i0 < nq - 1:
                    w = pos - i0
                    acc[ix] += row[i0] * (1.0 - w) + row[i0 + 1] * w
                pos += dpos
        out[iy, :] = acc
    return out


def _angles(n_views: int) -> tuple[np.ndarray, np.ndarray]:
    th = np.pi * np.arange(n_views, dtype=np.float64) / n_views
    return np.cos(th), np.sin(th)


def forward_project(
    ph: Phantom,
    kv: int,
    cfg: ScannerConfig | None = None,
    *,
    materials: MaterialTable | None = None,
) -> Sinogram:
    """Noiseless line integrals of mu(material, kv) for every (view, detector).

    Rays are clipped to the phantom's body bounding circle; everything outside
    the body is air (mu = 0) by phantom invariant, so the clip is exact.
    """
    cfg = cfg or ScannerConfig()
    mt = materials or MaterialTable()
    mu = np.ascontiguousarray(mu_image(ph, kv, mt), dtype=np.float32)
    cosv, sinv = _angles(cfg.n_views)
    rmax = min(max(ph.body_ab) + 4.0 * ph.spacing_mm, ph.fov_mm * math.sqrt(0.5))
    step = ph.spacing_mm / 2.0
    data = _march(
        mu,
        ph.spacing_mm,
        cosv,
        sinv,
        cfg.n_detectors,
        cfg.detector_pitch_mm,
        step,
        rmax,
    )
    return Sinogram(
        data=data,
        kv=kv,
        mas=None,
        noise_realization_seed=None,
        detector_pitch_mm=cfg.detector_pitch_mm,
        fov_mm=cfg.fov_mm,
        flux_per_mas=cfg.flux_per_mas,
        meta={"patient_id": ph.attrs.patient_id},
    )


def add_noise(
    s: Sinogram,
    mas: float,
    seed: int,
    *,
    flux_per_mas: float | None = None,
) -> Sinogram:
    """Poisson counting noise, pre-log. Deterministic per seed."""
    if s.mas is not None:
        raise ValueError("add_noise expects a noiseless sinogram")
    if mas <= 0:
        raise ValueError("mas must be positive")
    alpha = s.flux_per_mas if flux_per_mas is None else flux_per_mas
    n0 = alpha * mas
    lam = n0 * np.exp(-s.data)
    rng = philox("noise", seed)
    counts = rng.poisson(lam).astype(np.float64)
    noisy = np.log(n0) - np.log(np.maximum(counts, 1.0))
    meta = dict(s.meta)
    starved = float(np.mean(lam < 5.0))
    if starved > 0.01:
        meta["photon_starvation_fraction"] = starved
    return Sinogram(
        data=noisy,
        kv=s.kv,
        mas=float(mas),
        noise_realization_seed=int(seed),
        detector_pitch_mm=s.detector_pitch_mm,
        fov_mm=s.fov_mm,
        flux_per_mas=alpha,
        meta=meta,
    )


def _pad_length(n_detectors: int) -> int:
    return 1 << int(math.ceil(math.log2(2 * n_detectors)))


def reconstruct(
    s: Sinogram,
    filt: FilterSpec,
    pixel_mm: float,
    *,
    materials: MaterialTable | None = None,
) -> ReconImage:
    """Frequency-domain filtering + linear-interpolation back projection.

    The DC bin of the padded FFT gets weight df/4: the ramp's integral over
    the bin [-df/2, df/2] is df^2/4, which the W(0)=0 response would drop,
    and dropping it biases big uniform objects by tens of HU (cupping).
    """
    mt = materials or MaterialTable()
    nyq = 1.0 / (2.0 * s.detector_pitch_mm)
    if abs(filt.nyquist_cpmm - nyq) > 1e-9:
        raise ValueError(
            f"filter Nyquist {filt.nyquist_cpmm} c/mm does not match detector "
            f"pitch {s.detector_pitch_mm} mm (Nyquist {nyq} c/mm)"
        )
    if pixel_mm <= 0:
        raise ValueError("pixel_mm must be positive")
    matrix = int(round(s.fov_mm / pixel_mm))

    npad = _pad_length(s.n_detectors)
    freqs = scipy.fft.rfftfreq(npad, d=s.detector_pitch_mm)
    w = filt.response(freqs)
    df = 1.0 / (npad * s.detector_pitch_mm)
    w[0] = 0.25 * df  # exact |f| quadrature of the DC bin; response(0) stays 0

    spec = scipy.fft.rfft(np.asarray(s.data, dtype=np.float64), n=npad, axis=1)
    q = scipy.fft.irfft(spec * w, n=npad, axis=1).astype(np.float32)

    cosv, sinv = _angles(s.n_views)
    cdet = (s.n_detectors - 1) / 2.0
    bp = _backproject(
        np.ascontiguousarray(q),
        cosv,
        sinv,
        1.0 / s.detector_pitch_mm,
        cdet,
        matrix,
        float(pixel_mm),
    )
    mu = bp * np.float32(np.pi / s.n_views)
    mu_w = mt.mu_water(s.kv)
    hu = (1000.0 / mu_w) * (mu - np.float32(mu_w))
    return ReconImage(
        pixels=hu.astype(np.float32),
        pixel_mm=float(pixel_mm),
        slice_mm=BASE_SLICE_MM,
        params=None,
        provenance={
            "kv": s.kv,
            "mas": s.mas,
            "noise_seed": s.noise_realization_seed,
            **{k: v for k, v in s.meta.items()},
        },
    )


def acquire_and_reconstruct(
    ph: Phantom,
    p: ProtocolParams,
    cfg: ScannerConfig | None = None,
    seed: int = 0,
    *,
    materials: MaterialTable | None = None,
    noiseless: Sinogram | None = None,
) -> ReconImage:
    """Full pipeline for one protocol: project, noise, filter, back project.

    slice_mm > 0.5 averages k = slice_mm/0.5 reconstructions of independent
    noise realizations (noise drops ~ sqrt(k)). A precomputed noiseless
    sinogram for the same phantom/kV/config may be passed to skip projection.
    """
    cfg = cfg or ScannerConfig()
    mt = materials or MaterialTable()
    if noiseless is None:
        noiseless = forward_project(ph, p.tube_kv, cfg, materials=mt)
    elif noiseless.kv != p.tube_kv or noiseless.mas is not None:
        raise ValueError("provided sinogram must be noiseless and at the protocol's kV")

    filt = make_filter(p.kernel, p.filter_f50, cfg.nyquist_cpmm)
    k = int(round(p.slice_mm / BASE_SLICE_MM))
    stack = []
    starvation = 0.0
    for rep in range(k):
        noisy = add_noise(noiseless, p.tube_mas, derive_seed(seed, "rep", rep))
        starvation = max(starvation, noisy.meta.get("photon_starvation_fraction", 0.0))
        stack.append(reconstruct(noisy, filt, p.pixel_mm, materials=mt).pixels)
    pixels = stack[0] if k == 1 else np.mean(np.stack(stack), axis=0, dtype=np.float64).astype(np.float32)
    prov = {"patient_id": ph.attrs.patient_id, "seed": int(seed), "kv": p.tube_kv}
    if starvation:
        prov["photon_starvation_fraction"] = starvation
    return ReconImage(
        pixels=pixels,
        pixel_mm=p.pixel_mm,
        slice_mm=p.slice_mm,
        params=p,
        provenance=prov,
    )


# ---------------------------------------------------------------------------
# image file format: text header + row-major float32 raster

_IMG_MAGIC = "CTIMG1"


def write_image(img: ReconImage, f: BinaryIO) -> None:
    lines = [
        _IMG_MAGIC,
        f"matrix={img.matrix}",
        f"pixel_mm={img.pixel_mm!r}",
        f"slice_mm={img.slice_mm!r}",
        f"params={img.params.to_text() if img.params else 'none'}",
        f"patient_id={img.provenance.get('patient_id', 'unknown')}",
        f"seed={img.provenance.get('seed', 'none')}",
        "end",
    ]
    f.write(("\n".join(lines) + "\n").encode("ascii"))
    f.write(np.ascontiguousarray(img.pixels, dtype=np.float32).tobytes())


def read_image(f: BinaryIO) -> ReconImage:
    first = f.readline().decode("ascii").strip()
    if first != _IMG_MAGIC:
        raise ValueError(f"not an image file (magic {first!r})")
    header: dict[str, str] = {}
    while True:
        line = f.readline().decode("ascii").strip()
        if line == "end":
            break
        if not line:
            raise ValueError("truncated image header")
        key, _, val = line.partition("=")
        header[key] = val
    m = int(header["matrix"])
    pixels = np.frombuffer(f.read(m * m * 4), dtype=np.float32).reshape(m, m).copy()
    params = None if header["params"] == "none" else ProtocolParams.from_text(header["params"])
    prov = {"patient_id": header.get("patient_id", "unknown")}
    if header.get("seed", "none") != "none":
        prov["seed"] = int(header["seed"])
    return ReconImage(
        pixels=pixels,
        pixel_mm=float(header["pixel_mm"]),
        slice_mm=float(header["slice_mm"]),
        params=params,
        provenance=prov,
    )
