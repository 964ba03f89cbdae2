"""Isotope and hyperfine line catalog for the 823 nm 6s[3/2]2 -> 6p[3/2]2 line.

Line positions are stored as MHz offsets from a reference frequency given
in THz, so that differences between lines never go through THz-scale
floating point cancellation.

The catalog file is JSON::

    {
      "reference_frequency_thz": 364.097,
      "wavelength_nm": 823.0,
      "species": [{"mass": 129, "abundance": 0.264006, "spin_x2": 1}, ...],
      "lines": [{"mass": 129, "f_lower_x2": 5, "f_upper_x2": 5,
                 "offset_mhz": 0.0, "strength": 0.56,
                 "provenance": "anchor"}, ...]
    }

Half-integer quantum numbers are written doubled (``spin_x2 = 3`` means
I = 3/2).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CatalogError

J_LOWER = 2
J_UPPER = 2

ABUNDANCE_TOL = 1e-6
STRENGTH_TOL = 1e-6

# Half-width of the frequency window (around the outermost lines) in which
# the catalog is considered to describe the absorption.
COVERAGE_MARGIN_MHZ = 20e3

_KNOWN_SPINS = {129: Fraction(1, 2), 131: Fraction(3, 2)}


def _half_integer(value, what="value") -> Fraction:
    try:
        frac = Fraction(value).limit_denominator(1000)
    except (TypeError, ValueError):
        raise CatalogError(f"{what} must be a number, got {value!r}") from None
    if frac.denominator not in (1, 2) or abs(float(frac) - float(value)) > 1e-12:
        raise CatalogError(f"{what} must be a half-integer, got {value!r}")
    return frac


def allowed_transitions(nuclear_spin) -> list[tuple[Fraction, Fraction]]:
    """All (F_lower, F_upper) pairs for a J=2 -> J'=2 line with nuclear spin I.

    Selection rules are dF in {-1, 0, +1} with 0 -> 0 excluded. Pairs come
    out sorted by F_lower, then F_upper.

    >>> allowed_transitions(0)
    [(Fraction(2, 1), Fraction(2, 1))]
    >>> len(allowed_transitions(Fraction(3, 2)))
    10
    """
    spin = _half_integer(nuclear_spin, "nuclear_spin")
    if spin < 0:
        raise CatalogError(f"nuclear_spin must be >= 0, got {nuclear_spin!r}")
    lower = _f_levels(J_LOWER, spin)
    upper = _f_levels(J_UPPER, spin)
    out = []
    for fl in lower:
        for fu in upper:
            if abs(fu - fl) <= 1 and not (fl == 0 and fu == 0):
                out.append((fl, fu))
    return out


def _f_levels(j, spin):
    f = abs(j - spin)
    levels = []
    while f <= j + spin:
        levels.append(f)
        f += 1
    return levels


@dataclass(frozen=True)
class IsotopeSpecies:
    mass_number: int
    abundance: float
    nuclear_spin: Fraction


@dataclass(frozen=True)
class HyperfineLine:
    isotope: int
    f_lower: Fraction
    f_upper: Fraction
    offset: float  # MHz from the catalog reference frequency
    relative_strength: float
    provenance: str = "external"

    @property
    def label(self):
        return f"{self.isotope}Xe F={self.f_lower}->{self.f_upper}"


@dataclass(frozen=True)
class LineCatalog:
    reference_frequency: float  # THz
    species: tuple[IsotopeSpecies, ...]
    lines: tuple[HyperfineLine, ...]
    wavelength: float = 823.0  # nm
    _abundance: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "lines", tuple(self.lines))
        _validate(self)
        total = sum(s.abundance for s in self.species)
        object.__setattr__(
            self, "_abundance",
            {s.mass_number: s.abundance / total for s in self.species})

    def __len__(self):
        return len(self.lines)

    def species_by_mass(self, mass):
        for s in self.species:
            if s.mass_number == mass:
                return s
        raise CatalogError(f"unknown isotope {mass}")

    def find_line(self, mass, f_lower, f_upper) -> HyperfineLine:
        fl, fu = Fraction(f_lower), Fraction(f_upper)
        for line in self.lines:
            if line.isotope == mass and line.f_lower == fl and line.f_upper == fu:
                return line
        raise CatalogError(f"no line {mass}Xe F={fl}->{fu} in catalog")

    def line_frequency(self, line: HyperfineLine) -> float:
        """Absolute line center in THz."""
        return self.reference_frequency + line.offset * 1e-6

    @property
    def offsets(self) -> np.ndarray:
        return np.array([ln.offset for ln in self.lines], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([line_weight(ln, self) for ln in self.lines])

    @property
    def masses(self) -> np.ndarray:
        return np.array([ln.isotope for ln in self.lines], dtype=float)

    def coverage(self) -> tuple[float, float]:
        """(low, high) frequency window in THz the catalog is valid for."""
        off = self.offsets
        lo = off.min() - COVERAGE_MARGIN_MHZ
        hi = off.max() + COVERAGE_MARGIN_MHZ
        return (self.reference_frequency + lo * 1e-6,
                self.reference_frequency + hi * 1e-6)

    def check_coverage(self, frequency):
        lo, hi = self.coverage()
        f = np.asarray(frequency, dtype=float)
        if np.any((f < lo) | (f > hi)):
            raise CatalogError(
                f"frequency outside catalog window [{lo:.6f}, {hi:.6f}] THz")

    def restrict(self, keep) -> "LineCatalog":
        """Sub-catalog with the lines for which ``keep(line)`` is true.

        Strengths and abundances are renormalised so the result is valid.
        """
        lines = [ln for ln in self.lines if keep(ln)]
        if not lines:
            raise CatalogError("restriction leaves no lines")
        masses = sorted({ln.isotope for ln in lines})
        species = [s for s in self.species if s.mass_number in masses]
        ab_total = sum(s.abundance for s in species)
        species = [IsotopeSpecies(s.mass_number, s.abundance / ab_total,
                                  s.nuclear_spin) for s in species]
        new_lines = []
        for m in masses:
            group = [ln for ln in lines if ln.isotope == m]
            tot = sum(ln.relative_strength for ln in group)
            for ln in group:
                s = ln.relative_strength / tot if tot > 0 else 1.0 / len(group)
                new_lines.append(HyperfineLine(ln.isotope, ln.f_lower, ln.f_upper,
                                               ln.offset, s, ln.provenance))
        return LineCatalog(self.reference_frequency, species, new_lines,
                           self.wavelength)


def line_weight(line: HyperfineLine, catalog: LineCatalog) -> float:
    """Abundance-weighted strength of one line.

    Abundances are taken normalised over the catalog, so weights always
    total one even when the file's abundances sum to 1 only within the
    load tolerance.
    """
    if line not in catalog.lines:
        raise CatalogError(f"line {line.label} is not in the catalog")
    return catalog._abundance[line.isotope] * line.relative_strength


def _validate(cat: LineCatalog):
    if not cat.reference_frequency > 0:
        raise CatalogError("must be positive", "reference_frequency_thz")
    if not cat.wavelength > 0:
        raise CatalogError("must be positive", "wavelength_nm")
    if not cat.species:
        raise CatalogError("at least one species required", "species")
    if not cat.lines:
        raise CatalogError("at least one line required", "lines")

    seen = set()
    for k, s in enumerate(cat.species):
        loc = f"species[{k}]"
        if s.mass_number in seen:
            raise CatalogError(f"duplicate isotope {s.mass_number}", loc)
        seen.add(s.mass_number)
        if not 0.0 <= s.abundance <= 1.0:
            raise CatalogError(f"abundance {s.abundance} outside [0, 1]",
                               loc + ".abundance")
        expected = _expected_spin(s.mass_number)
        if expected is not None and s.nuclear_spin != expected:
            raise CatalogError(
                f"nuclear spin of {s.mass_number}Xe must be {expected}, "
                f"got {s.nuclear_spin}", loc + ".spin_x2")
        if expected is None and s.nuclear_spin <= 0:
            raise CatalogError("odd isotopes need a nonzero nuclear spin",
                               loc + ".spin_x2")
    total = sum(s.abundance for s in cat.species)
    if abs(total - 1.0) > ABUNDANCE_TOL:
        raise CatalogError(f"abundances sum to {total:.9g}, expected 1",
                           "species[].abundance")

    spins = {s.mass_number: s.nuclear_spin for s in cat.species}
    sums = {}
    for k, ln in enumerate(cat.lines):
        loc = f"lines[{k}]"
        if ln.isotope not in spins:
            raise CatalogError(f"unknown isotope {ln.isotope}", loc + ".mass")
        allowed = allowed_transitions(spins[ln.isotope])
        if (ln.f_lower, ln.f_upper) not in allowed:
            raise CatalogError(
                f"F={ln.f_lower}->{ln.f_upper} violates the selection rules for "
                f"I={spins[ln.isotope]}", loc + ".f_lower_x2/f_upper_x2")
        if not ln.relative_strength >= 0:
            raise CatalogError("strength must be >= 0", loc + ".strength")
        if not np.isfinite(ln.offset):
            raise CatalogError("offset must be finite", loc + ".offset_mhz")
        sums[ln.isotope] = sums.get(ln.isotope, 0.0) + ln.relative_strength
    for mass, tot in sums.items():
        if abs(tot - 1.0) > STRENGTH_TOL:
            raise CatalogError(
                f"strengths of {mass}Xe sum to {tot:.9g}, expected 1",
                "lines[].strength")


def _expected_spin(mass):
    if mass % 2 == 0:
        return Fraction(0)
    return _KNOWN_SPINS.get(mass)


# --- file format ------------------------------------------------------------

_TOP_KEYS = {"reference_frequency_thz", "wavelength_nm", "species", "lines"}
_SPECIES_KEYS = {"mass", "abundance", "spin_x2"}
_LINE_KEYS = {"mass", "f_lower_x2", "f_upper_x2", "offset_mhz", "strength",
              "provenance"}
_LINE_OPTIONAL = {"provenance"}


def _check_keys(obj, allowed, loc, optional=frozenset()):
    if not isinstance(obj, dict):
        raise CatalogError("expected a JSON object", loc)
    unknown = set(obj) - allowed
    if unknown:
        raise CatalogError(f"unknown key(s) {sorted(unknown)}", loc)
    missing = allowed - optional - set(obj)
    if missing:
        raise CatalogError(f"missing key(s) {sorted(missing)}", loc)


def _number(obj, key, loc):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise CatalogError(f"expected a number, got {v!r}", f"{loc}.{key}")
    return float(v)


def _integer(obj, key, loc):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise CatalogError(f"expected an integer, got {v!r}", f"{loc}.{key}")
    return v


def load_catalog(source) -> LineCatalog:
    """Parse and validate a catalog from bytes, text or a binary stream."""
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, (bytes, bytearray)):
        source = source.decode("utf-8")
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise CatalogError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    _check_keys(doc, _TOP_KEYS, "catalog")

    species = []
    if not isinstance(doc["species"], list):
        raise CatalogError("expected a list", "species")
    for k, s in enumerate(doc["species"]):
        loc = f"species[{k}]"
        _check_keys(s, _SPECIES_KEYS, loc)
        spin_x2 = _integer(s, "spin_x2", loc)
        if spin_x2 < 0:
            raise CatalogError("must be >= 0", loc + ".spin_x2")
        species.append(IsotopeSpecies(_integer(s, "mass", loc),
                                      _number(s, "abundance", loc),
                                      Fraction(spin_x2, 2)))
    lines = []
    if not isinstance(doc["lines"], list):
        raise CatalogError("expected a list", "lines")
    for k, ln in enumerate(doc["lines"]):
        loc = f"lines[{k}]"
        _check_keys(ln, _LINE_KEYS, loc, _LINE_OPTIONAL)
        prov = ln.get("provenance", "external")
        if not isinstance(prov, str):
            raise CatalogError("expected a string", loc + ".provenance")
        lines.append(HyperfineLine(
            _integer(ln, "mass", loc),
            Fraction(_integer(ln, "f_lower_x2", loc), 2),
            Fraction(_integer(ln, "f_upper_x2", loc), 2),
            _number(ln, "offset_mhz", loc),
            _number(ln, "strength", loc),
            prov,
        ))
    return LineCatalog(_number(doc, "reference_frequency_thz", "catalog"),
                       species, lines,
                       _number(doc, "wavelength_nm", "catalog"))


def catalog_to_dict(catalog: LineCatalog) -> dict:
    return {
        "reference_frequency_thz": catalog.reference_frequency,
        "wavelength_nm": catalog.wavelength,
        "species": [{"mass": s.mass_number, "abundance": s.abundance,
                     "spin_x2": int(2 * s.nuclear_spin)} for s in catalog.species],
        "lines": [{"mass": ln.isotope,
                   "f_lower_x2": int(2 * ln.f_lower),
                   "f_upper_x2": int(2 * ln.f_upper),
                   "offset_mhz": ln.offset,
                   "strength": ln.relative_strength,
                   "provenance": ln.provenance} for ln in catalog.lines],
    }


def dump_catalog(catalog: LineCatalog) -> bytes:
    return (json.dumps(catalog_to_dict(catalog), indent=2) + "\n").encode("utf-8")


def read_catalog(path) -> LineCatalog:
    """Load a catalog file; I/O failures propagate as OSError."""
    path = Path(path)
    try:
        return load_catalog(path.read_bytes())
    except CatalogError as exc:
        raise CatalogError(str(exc), str(path)) from None


def default_catalog() -> LineCatalog:
    """The shipped natural-xenon catalog (21 lines, 9 isotopes).

    Only the 129Xe F=5/2 -> 5/2 position (364.097 THz) is pinned; every
    other offset is a literature placeholder marked ``external``.
    """
    data = resources.files("xecavity.data").joinpath("natural_xenon.json").read_bytes()
    return load_catalog(data)
