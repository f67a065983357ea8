"""Transfer-matrix optics of the layered detector stack at normal incidence.

Each layer contributes the standard characteristic matrix
``[[cos d, i sin d / eta], [i eta sin d, cos d]]`` with phase thickness
``d = 2 pi N t / lambda`` and admittance ``eta = N`` (normal incidence).
Internally the complex index uses the exp(+i w t) sign convention
(N = n - ik) so that k >= 0 media absorb; the public API keeps the physics
convention n + ik from `materials`.

Reflectance and transmittance come from the assembled stack matrix; the
per-layer absorptance is the drop in time-averaged power flux across each
layer's boundaries, obtained by propagating the (E, H) field pair down the
stack. This partition conserves energy to rounding: R + T + sum(A) = 1.

The in-plane anisotropy of the absorber is handled as two decoupled scalar
problems (armchair axis, zigzag axis), valid at normal incidence with the
principal axes aligned; unpolarized response is the arithmetic mean of the
two axes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .materials import AIR, MaterialDispersion, Polarization, index_at

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Layer:
    """A finite-thickness film; zero thickness acts as identity."""

    material: MaterialDispersion
    thickness_nm: float

    def __post_init__(self):
        if self.thickness_nm < 0:
            raise ValueError(f"layer '{self.material.name}': negative thickness")


@dataclass(frozen=True)
class LayerStack:
    """Ordered films between a lossless incident medium and a semi-infinite exit medium.

    Layers are listed top (illuminated side) to bottom. The stack may be empty,
    in which case the response is the bare incident/exit Fresnel interface.
    """

    layers: tuple[Layer, ...]
    incident: MaterialDispersion = AIR
    exit: MaterialDispersion = AIR

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def with_thickness(self, index: int, thickness_nm: float) -> "LayerStack":
        """Copy of the stack with layer `index` set to a new thickness."""
        layers = list(self.layers)
        layers[index] = replace(layers[index], thickness_nm=thickness_nm)
        return replace(self, layers=tuple(layers))

    def find_layer(self, material_name: str, last: bool = False) -> int:
        """Index of the first (or last) layer whose material has this name."""
        matches = [i for i, lay in enumerate(self.layers)
                   if lay.material.name.lower() == material_name.lower()]
        if not matches:
            raise ValueError(f"no layer with material '{material_name}' in stack")
        return matches[-1] if last else matches[0]


@dataclass(frozen=True)
class OpticalResponse:
    """Reflected/transmitted fractions and per-layer absorbed fractions."""

    reflectance: float
    transmittance: float
    layer_absorptance: np.ndarray

    @property
    def absorptance_total(self) -> float:
        return float(np.sum(self.layer_absorptance))

    @property
    def conservation_error(self) -> float:
        return 1.0 - (self.reflectance + self.transmittance + self.absorptance_total)


def characteristic_matrix(layer: Layer, wavelength_nm: float,
                          axis: Polarization | str = Polarization.ARMCHAIR) -> np.ndarray:
    """2x2 characteristic matrix of a single layer (unit determinant)."""
    n_phys = index_at(layer.material, wavelength_nm, axis)
    eta = n_phys.conjugate()  # exp(+iwt) convention: N = n - ik
    delta = 2.0 * np.pi * eta * layer.thickness_nm / wavelength_nm
    cos_d = np.cos(delta)
    sin_d = np.sin(delta)
    return np.array([[cos_d, 1j * sin_d / eta],
                     [1j * eta * sin_d, cos_d]], dtype=complex)


def _admittance(material: MaterialDispersion, wavelength_nm: float,
                axis: Polarization | str) -> complex:
    return index_at(material, wavelength_nm, axis).conjugate()


def stack_response(stack: LayerStack, wavelength_nm: float,
                   axis: Polarization | str = Polarization.ARMCHAIR) -> OpticalResponse:
    """Full optical response of the stack for one linear polarization axis.

    For anisotropic content use `axis` armchair or zigzag; pass unpolarized
    light through `unpolarized_absorption` instead.
    """
    axis = Polarization(axis)
    if axis is Polarization.UNPOLARIZED:
        raise ValueError("stack_response handles a single axis; "
                         "use unpolarized_absorption for the axis average")

    eta_in = _admittance(stack.incident, wavelength_nm, axis)
    if abs(eta_in.imag) > 1e-12:
        raise ValueError(f"incident medium '{stack.incident.name}' must be lossless")
    eta_in = eta_in.real
    eta_exit = _admittance(stack.exit, wavelength_nm, axis)

    matrices = [characteristic_matrix(lay, wavelength_nm, axis) for lay in stack.layers]
    m_stack = np.eye(2, dtype=complex)
    for m in matrices:
        m_stack = m_stack @ m

    b, c = m_stack @ np.array([1.0, eta_exit], dtype=complex)
    denom = eta_in * b + c
    r = (eta_in * b - c) / denom
    reflectance = float(abs(r) ** 2)

    # Propagate (E, H) from just below the top interface and take the flux
    # drop across each layer. det(M) = 1, so the inverse is the adjugate.
    e, h = 1.0 + r, eta_in * (1.0 - r)
    flux_top = (e * np.conj(h)).real
    absorptance = np.empty(len(matrices))
    for j, m in enumerate(matrices):
        inv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]], dtype=complex)
        e, h = inv @ np.array([e, h])
        flux_bottom = (e * np.conj(h)).real
        absorptance[j] = (flux_top - flux_bottom) / eta_in
        flux_top = flux_bottom
    transmittance = float(flux_top / eta_in)
    return OpticalResponse(reflectance, transmittance, absorptance)


def unpolarized_absorption(stack: LayerStack, wavelength_nm: float) -> OpticalResponse:
    """Component-wise mean of the armchair and zigzag responses."""
    ac = stack_response(stack, wavelength_nm, Polarization.ARMCHAIR)
    zz = stack_response(stack, wavelength_nm, Polarization.ZIGZAG)
    return OpticalResponse(
        0.5 * (ac.reflectance + zz.reflectance),
        0.5 * (ac.transmittance + zz.transmittance),
        0.5 * (ac.layer_absorptance + zz.layer_absorptance),
    )


def locate_sweep_layers(stack: LayerStack) -> tuple[int, int, int]:
    """(top spacer, bottom spacer, absorber) layer indices of a device-like stack.

    The spacers are the first and last hBN layers; the absorber is the first
    anisotropic layer (falling back to a layer named 'bp').
    """
    top = stack.find_layer("hbn")
    bottom = stack.find_layer("hbn", last=True)
    if top == bottom:
        raise ValueError("stack needs distinct top and bottom hBN layers to sweep")
    absorber = None
    for i, lay in enumerate(stack.layers):
        if lay.material.is_anisotropic:
            absorber = i
            break
    if absorber is None:
        absorber = stack.find_layer("bp")
    return top, bottom, absorber


def _absorber_absorptance(stack: LayerStack, wavelength_nm: float,
                          axis: Polarization, absorber: int) -> float:
    if axis is Polarization.UNPOLARIZED:
        resp = unpolarized_absorption(stack, wavelength_nm)
    else:
        resp = stack_response(stack, wavelength_nm, axis)
    return float(resp.layer_absorptance[absorber])


def absorption_map(stack_template: LayerStack, top_thicknesses_nm, bottom_thicknesses_nm,
                   wavelength_nm: float, axis: Polarization | str = Polarization.ARMCHAIR,
                   sweep_layers: tuple[int, int, int] | None = None) -> np.ndarray:
    """Absorber absorptance over a (top hBN, bottom hBN) thickness grid.

    Returns an array of shape (len(top), len(bottom)); rows follow the top
    grid, columns the bottom grid. Cells are independent evaluations.
    """
    axis = Polarization(axis)
    tops = np.asarray(top_thicknesses_nm, dtype=float)
    bottoms = np.asarray(bottom_thicknesses_nm, dtype=float)
    for grid, label in ((tops, "top"), (bottoms, "bottom")):
        if grid.size == 0:
            raise ValueError(f"empty {label} thickness grid")
        if grid.size > 1 and not np.all(np.diff(grid) > 0):
            raise ValueError(f"{label} thickness grid must be strictly increasing")
    i_top, i_bottom, i_abs = sweep_layers or locate_sweep_layers(stack_template)

    out = np.empty((tops.size, bottoms.size))
    for a, t_top in enumerate(tops):
        stack_row = stack_template.with_thickness(i_top, t_top)
        for b, t_bottom in enumerate(bottoms):
            stack = stack_row.with_thickness(i_bottom, t_bottom)
            out[a, b] = _absorber_absorptance(stack, wavelength_nm, axis, i_abs)
    return out


def _golden_section(fun, lo: float, hi: float, tol: float = 1e-3) -> tuple[float, float]:
    """Maximize `fun` on [lo, hi]; returns (x_best, f_best)."""
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = fun(x1), fun(x2)
    while (b - a) > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = fun(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = fun(x1)
    return (x1, f1) if f1 >= f2 else (x2, f2)


@dataclass(frozen=True)
class ThicknessOptimum:
    top_nm: float
    bottom_nm: float
    absorptance: float


def optimize_thicknesses(stack_template: LayerStack,
                         top_bounds_nm: tuple[float, float],
                         bottom_bounds_nm: tuple[float, float],
                         wavelength_nm: float,
                         axis: Polarization | str = Polarization.ARMCHAIR,
                         coarse_step_nm: float = 2.0,
                         refine_tol_nm: float = 1e-2,
                         sweep_layers: tuple[int, int, int] | None = None) -> ThicknessOptimum:
    """Maximize absorber absorptance over the two spacer thicknesses.

    Coarse grid search at `coarse_step_nm` resolution, then alternating
    golden-section refinement on each coordinate around the best cell. The
    result is always >= the best coarse-grid value.
    """
    axis = Polarization(axis)
    for lo, hi in (top_bounds_nm, bottom_bounds_nm):
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo < 0 or hi < lo:
            raise ValueError("bounds must be finite, nonnegative and ordered")
    layers_idx = sweep_layers or locate_sweep_layers(stack_template)
    i_top, i_bottom, i_abs = layers_idx

    def grid(bounds):
        lo, hi = bounds
        if hi == lo:
            return np.array([lo])
        pts = np.arange(lo, hi, coarse_step_nm)
        return np.append(pts, hi)

    tops, bottoms = grid(top_bounds_nm), grid(bottom_bounds_nm)
    coarse = absorption_map(stack_template, tops, bottoms, wavelength_nm, axis,
                            sweep_layers=layers_idx)
    a, b = np.unravel_index(int(np.argmax(coarse)), coarse.shape)
    best_top, best_bottom, best_val = float(tops[a]), float(bottoms[b]), float(coarse[a, b])

    def evaluate(t_top, t_bottom):
        stack = stack_template.with_thickness(i_top, t_top).with_thickness(i_bottom, t_bottom)
        return _absorber_absorptance(stack, wavelength_nm, axis, i_abs)

    for _ in range(2):
        lo = max(top_bounds_nm[0], best_top - coarse_step_nm)
        hi = min(top_bounds_nm[1], best_top + coarse_step_nm)
        if hi > lo:
            x, fx = _golden_section(lambda t: evaluate(t, best_bottom), lo, hi, refine_tol_nm)
            if fx > best_val:
                best_top, best_val = x, fx
        lo = max(bottom_bounds_nm[0], best_bottom - coarse_step_nm)
        hi = min(bottom_bounds_nm[1], best_bottom + coarse_step_nm)
        if hi > lo:
            x, fx = _golden_section(lambda t: evaluate(best_top, t), lo, hi, refine_tol_nm)
            if fx > best_val:
                best_bottom, best_val = x, fx
    return ThicknessOptimum(best_top, best_bottom, best_val)
