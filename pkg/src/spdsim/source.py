"""Calibrated weak-coherent-state photon source.

A pulsed laser well above threshold emits coherent states; the photon number
per pulse is Poisson with mean ``n_bar = mean_power * lambda / (h c f)``.
Attenuation preserves the Poisson character and only scales ``n_bar``, so an
optical chain of polarizers, splitters and absorptive attenuators reduces to
a single transmittance factor. Polarization is tracked as a linear axis angle
plus an "unpolarized" flag; a multimode-fiber stage depolarizes without loss.

Power-meter readings carry a relative uncertainty (default 5%) that
propagates multiplicatively to the inferred mean photon number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# CODATA: h is exact in SI since 2019; c is exact by definition.
PLANCK_H = 6.62607015e-34  # J s
SPEED_OF_LIGHT = 299792458.0  # m / s


def photon_energy_joules(wavelength_nm: float) -> float:
    """Energy h*c/lambda of a single photon."""
    if wavelength_nm <= 0:
        raise ValueError("wavelength must be positive")
    return PLANCK_H * SPEED_OF_LIGHT / (wavelength_nm * 1e-9)


@dataclass(frozen=True)
class PulsePolarization:
    """Linear polarization at `angle_deg` in the device frame; None = unpolarized.

    Angle 0 is aligned with the absorber's armchair axis, 90 with zigzag.
    """

    angle_deg: float | None = None

    @classmethod
    def unpolarized(cls) -> "PulsePolarization":
        return cls(None)

    @classmethod
    def linear(cls, angle_deg: float) -> "PulsePolarization":
        return cls(float(angle_deg))

    @classmethod
    def armchair(cls) -> "PulsePolarization":
        return cls.linear(0.0)

    @classmethod
    def zigzag(cls) -> "PulsePolarization":
        return cls.linear(90.0)

    @property
    def is_unpolarized(self) -> bool:
        return self.angle_deg is None


@dataclass(frozen=True)
class CoherentPulseTrain:
    """Pulsed coherent source: Poisson photon number with mean `mean_photons`."""

    wavelength_nm: float
    repetition_rate_hz: float
    mean_photons: float
    polarization: PulsePolarization = PulsePolarization.unpolarized()

    def __post_init__(self):
        if self.wavelength_nm <= 0 or self.repetition_rate_hz <= 0:
            raise ValueError("wavelength and repetition rate must be positive")
        if self.mean_photons < 0:
            raise ValueError("mean photon number must be nonnegative")

    @property
    def photon_flux_hz(self) -> float:
        return self.mean_photons * self.repetition_rate_hz

    @property
    def mean_power_watts(self) -> float:
        return power_from_mean_photons(self.mean_photons, self.wavelength_nm,
                                       self.repetition_rate_hz)


@dataclass(frozen=True)
class PowerReading:
    """Average optical power with the meter's relative uncertainty."""

    mean_power_watts: float
    relative_uncertainty: float = 0.05

    def __post_init__(self):
        if self.mean_power_watts < 0 or self.relative_uncertainty < 0:
            raise ValueError("power and uncertainty must be nonnegative")


@dataclass(frozen=True)
class Polarizer:
    """Ideal linear polarizer; Malus transmittance cos^2 of the relative angle."""

    angle_deg: float


@dataclass(frozen=True)
class Attenuator:
    """Fixed-transmittance absorptive element (NDF, shutter, coupling loss)."""

    transmittance: float

    def __post_init__(self):
        if not (0.0 < self.transmittance <= 1.0):
            raise ValueError("attenuator transmittance must be in (0, 1]")


@dataclass(frozen=True)
class Splitter:
    """Beam splitter followed along its pass arm; factor 1 - tap_fraction."""

    tap_fraction: float

    def __post_init__(self):
        if not (0.0 <= self.tap_fraction < 1.0):
            raise ValueError("tap fraction must be in [0, 1)")


@dataclass(frozen=True)
class MultimodeFiber:
    """Depolarizing multimode fiber: scrambles polarization, unity transmittance."""


Stage = Polarizer | Attenuator | Splitter | MultimodeFiber


@dataclass(frozen=True)
class OpticalChain:
    stages: tuple[Stage, ...] = ()


def _stage_effect(stage: Stage, polarization: PulsePolarization
                  ) -> tuple[float, PulsePolarization]:
    """(transmittance factor, output polarization) of one stage."""
    if isinstance(stage, Polarizer):
        if polarization.is_unpolarized:
            factor = 0.5
        else:
            delta = math.radians(stage.angle_deg - polarization.angle_deg)
            factor = math.cos(delta) ** 2
        return factor, PulsePolarization.linear(stage.angle_deg)
    if isinstance(stage, Attenuator):
        return stage.transmittance, polarization
    if isinstance(stage, Splitter):
        return 1.0 - stage.tap_fraction, polarization
    if isinstance(stage, MultimodeFiber):
        return 1.0, PulsePolarization.unpolarized()
    raise TypeError(f"unknown chain stage {stage!r}")


def chain_transmittance(chain: OpticalChain,
                        polarization: PulsePolarization | None = None
                        ) -> tuple[float, PulsePolarization]:
    """Product transmittance of the chain and the exit polarization state.

    Polarizer stages need a defined input polarization; passing None restricts
    the chain to polarization-independent stages.
    """
    if polarization is None:
        for stage in chain.stages:
            if isinstance(stage, Polarizer):
                raise ValueError("chain contains a polarizer; the input "
                                 "polarization state is required")
        polarization = PulsePolarization.unpolarized()
    factor = 1.0
    for stage in chain.stages:
        stage_factor, polarization = _stage_effect(stage, polarization)
        factor *= stage_factor
    return factor, polarization


def apply_chain(pulse_or_power: CoherentPulseTrain | PowerReading,
                chain: OpticalChain):
    """Propagate a pulse train or power reading through the chain.

    Coherent states stay coherent: only the mean photon number (or mean
    power) is scaled by the chain transmittance.
    """
    if isinstance(pulse_or_power, CoherentPulseTrain):
        factor, pol = chain_transmittance(chain, pulse_or_power.polarization)
        return replace(pulse_or_power, mean_photons=pulse_or_power.mean_photons * factor,
                       polarization=pol)
    if isinstance(pulse_or_power, PowerReading):
        factor, _ = chain_transmittance(chain, None)
        return replace(pulse_or_power,
                       mean_power_watts=pulse_or_power.mean_power_watts * factor)
    raise TypeError("expected a CoherentPulseTrain or PowerReading")


def poisson_pmf(n_bar: float, n: int) -> float:
    """P(n) = exp(-n_bar) n_bar^n / n!, evaluated in log space for stability."""
    if n_bar < 0:
        raise ValueError("mean photon number must be nonnegative")
    if n < 0 or n != int(n):
        raise ValueError("photon number must be a nonnegative integer")
    n = int(n)
    if n_bar == 0.0:
        return 1.0 if n == 0 else 0.0
    return math.exp(-n_bar + n * math.log(n_bar) - math.lgamma(n + 1))


def multi_photon_probability(n_bar: float) -> float:
    """Probability of a pulse carrying more than one photon: 1 - e^-n (1 + n)."""
    if n_bar < 0:
        raise ValueError("mean photon number must be nonnegative")
    # -expm1 keeps precision for n_bar << 1 where the direct form cancels.
    return -math.expm1(-n_bar) - n_bar * math.exp(-n_bar)


def mean_photons_from_power(mean_power_watts: float, wavelength_nm: float,
                            repetition_rate_hz: float) -> float:
    """Invert P = n_bar h nu f: photons per pulse from average power."""
    if mean_power_watts <= 0 or repetition_rate_hz <= 0:
        raise ValueError("power and repetition rate must be positive")
    return mean_power_watts / (photon_energy_joules(wavelength_nm) * repetition_rate_hz)


def power_from_mean_photons(n_bar: float, wavelength_nm: float,
                            repetition_rate_hz: float) -> float:
    """Average power P = n_bar h nu f of the pulse train."""
    if n_bar < 0 or repetition_rate_hz <= 0:
        raise ValueError("n_bar must be nonnegative, repetition rate positive")
    return n_bar * photon_energy_joules(wavelength_nm) * repetition_rate_hz


@dataclass(frozen=True)
class CalibrationResult:
    n_bar: float
    n_bar_sigma: float
    power_device_watts: float


def calibrate_flux(reading: PowerReading, tap_fraction: float,
                   post_tap_chain: OpticalChain, wavelength_nm: float,
                   repetition_rate_hz: float) -> CalibrationResult:
    """Device-plane mean photon number from the tap-arm power monitor.

    The splitter sends `tap_fraction` of the power to the meter; the rest
    continues through `post_tap_chain` (shutter, NDF stack, coupling) to the
    device. The meter's relative uncertainty maps multiplicatively onto
    n_bar.
    """
    if not (0.0 < tap_fraction < 1.0):
        raise ValueError("tap fraction must be in (0, 1)")
    chain_factor, _ = chain_transmittance(post_tap_chain, None)
    power_device = reading.mean_power_watts * (1.0 - tap_fraction) / tap_fraction * chain_factor
    n_bar = mean_photons_from_power(power_device, wavelength_nm, repetition_rate_hz)
    return CalibrationResult(n_bar, n_bar * reading.relative_uncertainty, power_device)


def sample_photon_numbers(train: CoherentPulseTrain, n_pulses: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Draw per-pulse photon numbers; the caller owns the random stream."""
    return rng.poisson(train.mean_photons, size=int(n_pulses))
