"""Closed-form physics of a square membrane under biaxial tensile stress.

Eigenfrequencies follow from the anisotropic membrane wave equation with
fixed edges (w = 0 on the boundary)::

    f_mn = (1 / 2L) * sqrt((m**2 * sigma_x + n**2 * sigma_y) / rho)

Dissipation dilution uses the bending-rigidity correction of a thin plate
under tension.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ValidationError

#: 3C-SiC mass density (kg/m^3); not measured on the device, a literature value.
SIC_DENSITY = 3210.0
SIC_YOUNGS_MODULUS = 437e9
SIC_POISSON_RATIO = 0.268

#: Fitted biaxial stress of the reference 500 um x 500 um x 50 nm device (Pa).
REFERENCE_STRESS_X = 242.95e6
REFERENCE_STRESS_Y = 245.81e6

THIN_PLATE_LIMIT = 0.01


class ThinPlateWarning(UserWarning):
    """Aspect ratio h/L is too large for the membrane approximation."""


@dataclass(frozen=True)
class MembraneSpec:
    """Geometry, material and stress state of one square membrane (SI units)."""

    side_length: float
    thickness: float
    density: float
    stress_x: float
    stress_y: float
    youngs_modulus: float = SIC_YOUNGS_MODULUS
    poisson_ratio: float = SIC_POISSON_RATIO

    def __post_init__(self):
        for name in ("side_length", "thickness", "density", "youngs_modulus"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be positive, got {value!r}", field=name)
        for name in ("stress_x", "stress_y"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(
                    f"{name} must be positive (taut membrane), got {value!r}", field=name
                )
        nu = self.poisson_ratio
        if not (math.isfinite(nu) and 0.0 <= nu < 0.5):
            raise ValidationError(f"poisson_ratio must lie in [0, 0.5), got {nu!r}", field="poisson_ratio")
        if self.thickness / self.side_length > THIN_PLATE_LIMIT:
            warnings.warn(
                f"h/L = {self.thickness / self.side_length:.3g} exceeds {THIN_PLATE_LIMIT}; "
                "membrane formulas lose accuracy",
                ThinPlateWarning,
                stacklevel=3,
            )

    @property
    def mean_stress(self) -> float:
        return 0.5 * (self.stress_x + self.stress_y)

    @property
    def is_isotropic(self) -> bool:
        return self.stress_x == self.stress_y

    def with_stress(self, stress_x: float, stress_y: float) -> "MembraneSpec":
        return MembraneSpec(
            self.side_length, self.thickness, self.density, stress_x, stress_y,
            self.youngs_modulus, self.poisson_ratio,
        )


def reference_membrane(**overrides) -> MembraneSpec:
    """The 3C-SiC reference device with its fitted stresses."""
    params = dict(
        side_length=500e-6,
        thickness=50e-9,
        density=SIC_DENSITY,
        stress_x=REFERENCE_STRESS_X,
        stress_y=REFERENCE_STRESS_Y,
        youngs_modulus=SIC_YOUNGS_MODULUS,
        poisson_ratio=SIC_POISSON_RATIO,
    )
    params.update(overrides)
    return MembraneSpec(**params)


class ModeIndex(NamedTuple):
    """Antinode counts ``m`` (along x) and ``n`` (along y)."""

    m: int
    n: int

    @classmethod
    def of(cls, m, n) -> "ModeIndex":
        if isinstance(m, bool) or isinstance(n, bool):
            raise ValidationError("mode indices must be integers")
        if int(m) != m or int(n) != n:
            raise ValidationError(f"mode indices must be integers, got ({m}, {n})")
        m, n = int(m), int(n)
        if m < 1 or n < 1:
            raise ValidationError(f"mode indices must be >= 1, got ({m}, {n})", field="index")
        return cls(m, n)

    @property
    def partner(self) -> "ModeIndex":
        return ModeIndex(self.n, self.m)

    @property
    def order(self) -> int:
        """m**2 + n**2, the abscissa of the isotropic frequency law."""
        return self.m * self.m + self.n * self.n

    def __str__(self):
        return f"({self.m},{self.n})"


def _index(index) -> ModeIndex:
    if isinstance(index, ModeIndex):
        if index.m < 1 or index.n < 1:
            raise ValidationError(f"mode indices must be >= 1, got {tuple(index)}", field="index")
        return index
    return ModeIndex.of(*index)


def mode_frequency(spec: MembraneSpec, index) -> float:
    """Out-of-plane eigenfrequency (Hz) of mode ``index``."""
    m, n = _index(index)
    return math.sqrt((m * m * spec.stress_x + n * n * spec.stress_y) / spec.density) / (2.0 * spec.side_length)


def mode_frequencies(spec: MembraneSpec, indices: Sequence) -> np.ndarray:
    """Vectorized :func:`mode_frequency` over a sequence of indices."""
    mn = np.array([tuple(_index(i)) for i in indices], dtype=float).reshape(-1, 2)
    m2, n2 = mn[:, 0] ** 2, mn[:, 1] ** 2
    return np.sqrt((m2 * spec.stress_x + n2 * spec.stress_y) / spec.density) / (2.0 * spec.side_length)


def enumerate_modes(spec: MembraneSpec, max_frequency: float) -> list[tuple[ModeIndex, float]]:
    """All modes with frequency <= ``max_frequency``, ascending by frequency.

    Ties (exact degeneracies) are ordered by ``m`` descending so the ``m > n``
    member comes first.
    """
    out = []
    lo = mode_frequency(spec, (1, 1))
    if max_frequency < lo:
        return out
    # f grows at least as fast as the weaker stress alone
    limit = int(2.0 * spec.side_length * max_frequency * math.sqrt(spec.density / min(spec.stress_x, spec.stress_y))) + 1
    for m in range(1, limit + 1):
        for n in range(1, limit + 1):
            f = mode_frequency(spec, (m, n))
            if f <= max_frequency:
                out.append((ModeIndex(m, n), f))
    out.sort(key=lambda item: (item[1], -item[0].m))
    return out


def pair_splitting(spec: MembraneSpec, index) -> float:
    """``f(n, m) - f(m, n)``; positive when sigma_y > sigma_x and m > n."""
    idx = _index(index)
    if idx.m == idx.n:
        raise ValidationError(f"mode {idx} is self-symmetric and has no partner", field="index")
    if spec.is_isotropic:
        return 0.0
    return mode_frequency(spec, idx.partner) - mode_frequency(spec, idx)


def bending_rigidity(spec: MembraneSpec) -> float:
    """Flexural rigidity E h^3 / (12 (1 - nu^2)) in N m."""
    nu = spec.poisson_ratio
    return spec.youngs_modulus * spec.thickness ** 3 / (12.0 * (1.0 - nu * nu))


def dilution_parameter(spec: MembraneSpec, mean_stress: float | None = None) -> float:
    sigma = spec.mean_stress if mean_stress is None else mean_stress
    if not (math.isfinite(sigma) and sigma > 0):
        raise ValidationError(f"mean stress must be positive, got {sigma!r}", field="mean_stress")
    return math.sqrt(4.0 * bending_rigidity(spec) / (sigma * spec.thickness * spec.side_length ** 2))


def dilution_factor(spec: MembraneSpec, index, mean_stress: float | None = None) -> float:
    """Dissipation-dilution factor D_Q of mode ``index``.

    ``mean_stress`` defaults to the arithmetic mean of the two axis stresses.
    """
    idx = _index(index)
    lam = dilution_parameter(spec, mean_stress)
    return 1.0 / lam / (1.0 + math.pi ** 2 * lam * idx.order / 4.0)


# -- mode shapes --------------------------------------------------------------


def mode_shape(index, x, y, side_length):
    """sin(m pi x / L) sin(n pi y / L); accepts scalars or broadcastable arrays."""
    m, n = _index(index)
    if not side_length > 0:
        raise ValidationError("side_length must be positive", field="side_length")
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if np.any((xa < 0) | (xa > side_length) | (ya < 0) | (ya > side_length)):
        raise ValidationError("point lies outside the membrane [0, L] x [0, L]", field="x")
    # sin(k*pi) is not exactly zero in floating point; pin the clamped edges
    u = np.where((xa == 0) | (xa == side_length), 0.0, np.sin(m * np.pi * xa / side_length))
    v = np.where((ya == 0) | (ya == side_length), 0.0, np.sin(n * np.pi * ya / side_length))
    out = u * v
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ModeShapeField:
    """Amplitude sampled on a uniform (resolution x resolution) grid over the membrane.

    ``amplitude[i, j]`` is the value at ``(x[j], y[i])``. ``index`` is None for
    superpositions.
    """

    index: ModeIndex | None
    side_length: float
    amplitude: np.ndarray = field(repr=False)

    @property
    def resolution(self) -> int:
        return self.amplitude.shape[0]

    @property
    def coords(self) -> np.ndarray:
        return np.linspace(0.0, self.side_length, self.resolution)

    def value_at_center(self) -> float:
        r = self.resolution
        if r % 2 == 0:
            raise ValueError("grid has no center node; use an odd resolution")
        return float(self.amplitude[r // 2, r // 2])


def mode_shape_field(index, side_length: float, resolution: int = 101) -> ModeShapeField:
    if resolution < 2:
        raise ValidationError("resolution must be >= 2", field="resolution")
    c = np.linspace(0.0, side_length, resolution)
    amp = mode_shape(index, c[None, :], c[:, None], side_length)
    peak = np.max(np.abs(amp))
    if peak > 0:
        amp = amp / peak
    amp.setflags(write=False)
    return ModeShapeField(_index(index), side_length, amp)


def superpose_shapes(alpha: float, beta: float, a: ModeShapeField, b: ModeShapeField, sign: int = 1) -> ModeShapeField:
    """``alpha * a + sign * beta * b`` renormalized to unit peak magnitude.

    With ``beta == 0`` the result is ``a`` itself.
    """
    if sign not in (1, -1):
        raise ValidationError("sign must be +1 or -1", field="sign")
    if a.amplitude.shape != b.amplitude.shape or a.side_length != b.side_length:
        raise ValidationError("mode-shape fields are sampled on different grids", field="grid")
    if beta == 0:
        return a
    amp = alpha * a.amplitude + sign * beta * b.amplitude
    peak = np.max(np.abs(amp))
    if peak > 0:
        amp = amp / peak
    amp.setflags(write=False)
    return ModeShapeField(None, a.side_length, amp)
