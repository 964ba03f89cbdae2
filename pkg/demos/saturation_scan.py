"""Simulate the default three-power scan and summarise it.

Prints the ratio at 364.097 THz for each probe power and the half-depth
width of the even-isotope dip, then plots the traces if matplotlib is
installed.

    python demos/saturation_scan.py
"""
import numpy as np

from xecavity.acceptance import ANCHOR, even_isotope_center
from xecavity.cavity import CavitySpec
from xecavity.catalog import default_catalog
from xecavity.medium import MediumParams
from xecavity.protocol import ScanPlan, apparent_dip_width, run_scan


def main():
    catalog = default_catalog()
    plan = ScanPlan()
    traces = run_scan(plan, CavitySpec(), MediumParams(), catalog, workers=4)
    center = even_isotope_center(catalog)

    print(f"{'power (nW)':>10}  {'ratio @ anchor':>14}  {'even dip width (MHz)':>20}")
    for t in traces:
        k = int(np.argmin(np.abs(t.resonance - ANCHOR)))
        width = apparent_dip_width(t, center)
        print(f"{t.probe_power * 1e9:10.2f}  {t.ratio[k]:14.4f}  {width:20.1f}")

    try:
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots()
    for t in traces:
        ax.plot((t.resonance - ANCHOR) * 1e3, t.ratio, label=f"{t.probe_power * 1e9:g} nW")
    ax.set_xlabel("cavity resonance - 364.097 THz (GHz)")
    ax.set_ylabel("transmission ratio")
    ax.legend()
    plt.show()


if __name__ == "__main__":
    main()
