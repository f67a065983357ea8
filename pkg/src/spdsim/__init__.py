"""Simulation and analysis toolkit for a 1550 nm thin-film single-photon detector.

Subpackages map onto the stages of the physical experiment:

- `materials`: complex refractive-index tables, including in-plane anisotropy.
- `tmm`: transfer-matrix optics of the layered device, absorption sweeps and
  thickness optimization.
- `source`: weak coherent pulse trains, polarizer/attenuator chains, and
  power-meter calibration.
- `detsim`: stochastic simulator of the capture/release detection cycle with
  dark counts, dead time, and synthetic output-voltage traces.
- `analysis`: event recovery from traces, occupation histograms, count rates,
  and quantum-efficiency estimators.
- `cli`: command-line entry points gluing the above into reproducible runs.
"""

__version__ = "0.1.0"
