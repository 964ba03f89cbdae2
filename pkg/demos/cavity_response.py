"""Cavity figures of merit and the on-resonance saturation curve.

    python demos/cavity_response.py
"""
import numpy as np

from xecavity.acceptance import ANCHOR
from xecavity.cavity import CavitySpec, figures, solve_steady_state
from xecavity.catalog import default_catalog
from xecavity.medium import MediumParams, SaturationModel


def main():
    spec = CavitySpec()
    fig = figures(spec, ANCHOR)
    print(f"FSR {fig.fsr:.4f} GHz, finesse {fig.finesse:.0f}, linewidth {fig.linewidth:.3f} MHz,"
          f" Q {fig.quality_factor:.3g}, buildup {fig.buildup:.0f}")

    catalog = default_catalog()
    powers = np.geomspace(1e-12, 1e-4, 9)
    print(f"\n{'P_in (W)':>9}" + "".join(f"{k:>20}" for k in
                                         ("velocity_selective", "homogeneous", "inhomogeneous")))
    rows = []
    for kind in ("velocity_selective", "homogeneous", "inhomogeneous"):
        med = MediumParams(model=SaturationModel(kind=kind))
        rows.append(solve_steady_state(powers, ANCHOR, ANCHOR, spec, med,
                                       catalog).transmission_ratio)
    for p, *r in zip(powers, *rows):
        print(f"{p:9.0e}" + "".join(f"{x:20.4f}" for x in r))


if __name__ == "__main__":
    main()
