"""Regenerate ``src/xecavity/data/natural_xenon.json``.

Offsets come from approximate hyperfine A/B constants and isotope shifts
taken from the spectroscopy literature; they are placeholders for
measured values and are flagged ``external`` in the provenance column.
Relative strengths use the standard 6j-symbol weights for a J=2 -> J'=2
transition with the lower F levels populated in proportion to 2F+1.

This script is a data-preparation tool; the library never computes
hyperfine structure itself.

    python tools/make_default_catalog.py > src/xecavity/data/natural_xenon.json
"""
import json
from fractions import Fraction

from sympy import Rational
from sympy.physics.wigner import wigner_6j

J_LOWER = J_UPPER = 2

# mass: (abundance, 2I)
SPECIES = {
    124: (0.000952, 0),
    126: (0.000890, 0),
    128: (0.019102, 0),
    129: (0.264006, 1),
    130: (0.040710, 0),
    131: (0.212324, 3),
    132: (0.269086, 0),
    134: (0.104357, 0),
    136: (0.088573, 0),
}

# MHz. (A_lower, B_lower, A_upper, B_upper)
HFS = {
    129: (-2384.0, 0.0, -890.0, 0.0),
    131: (706.7, 30.0, 263.8, 20.0),
}

ANCHOR = (129, 5, 5)  # 129Xe F=5/2 -> F'=5/2, pinned to the reference frequency
REFERENCE_THZ = 364.097


def isotope_shift(mass):
    """Placeholder isotope shift relative to 132Xe, MHz."""
    return -12.5 * (mass - 132)


def hfs_energy(f2, i2, j, a, b):
    f = Fraction(f2, 2)
    i = Fraction(i2, 2)
    k = f * (f + 1) - i * (i + 1) - j * (j + 1)
    e = a * float(k) / 2
    if b and i2 >= 2:
        num = Fraction(3, 4) * k * (k + 1) - i * (i + 1) * j * (j + 1)
        den = 2 * i * (2 * i - 1) * j * (2 * j - 1)
        e += b * float(num / den)
    return e


def pairs(i2):
    fs = range(abs(2 * J_LOWER - i2), 2 * J_LOWER + i2 + 1, 2)
    out = []
    for fl in fs:
        for fu in fs:
            if abs(fu - fl) <= 2 and not (fl == 0 and fu == 0):
                out.append((fl, fu))
    return out


def strength(fl2, fu2, i2):
    six = wigner_6j(J_LOWER, Rational(fl2, 2), Rational(i2, 2),
                    Rational(fu2, 2), J_UPPER, 1)
    return float((fl2 + 1) * (fu2 + 1) * six**2)


def main():
    raw = []
    for mass, (abund, i2) in SPECIES.items():
        al, bl, au, bu = HFS.get(mass, (0.0, 0.0, 0.0, 0.0))
        plist = pairs(i2)
        weights = [strength(fl, fu, i2) if i2 else 1.0 for fl, fu in plist]
        total = sum(weights)
        for (fl, fu), w in zip(plist, weights):
            nu = (isotope_shift(mass)
                  + hfs_energy(fu, i2, J_UPPER, au, bu)
                  - hfs_energy(fl, i2, J_LOWER, al, bl))
            raw.append([mass, fl, fu, nu, w / total])
    anchor = next(r for r in raw if tuple(r[:3]) == ANCHOR)
    zero = anchor[3]
    lines = []
    for mass, fl, fu, nu, s in raw:
        is_anchor = (mass, fl, fu) == ANCHOR
        lines.append({
            "mass": mass,
            "f_lower_x2": fl,
            "f_upper_x2": fu,
            "offset_mhz": 0.0 if is_anchor else round(nu - zero, 3),
            "strength": round(s, 12),
            "provenance": "anchor" if is_anchor else "external",
        })
    # re-normalise rounded strengths per isotope
    for mass in SPECIES:
        group = [ln for ln in lines if ln["mass"] == mass]
        tot = sum(ln["strength"] for ln in group)
        for ln in group:
            ln["strength"] = ln["strength"] / tot
    doc = {
        "reference_frequency_thz": REFERENCE_THZ,
        "wavelength_nm": 823.0,
        "species": [{"mass": m, "abundance": a, "spin_x2": i2}
                    for m, (a, i2) in SPECIES.items()],
        "lines": lines,
    }
    print(json.dumps(doc, indent=2))


if __name__ == "__main__":
    main()
