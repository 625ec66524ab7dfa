"""Regenerate crates/core/data/elements.csv from pymatgen's periodic table.

Usage: python3 scripts/make_elements_csv.py > crates/core/data/elements.csv
       python3 scripts/make_elements_csv.py --extended > crates/core/data/extended_oxidation_states.csv

Column rules:
  empirical_radius   atomic_radius, else atomic_radius_calculated, else
                     metallic_radius, else the fallback table below
  electronegativity  Pauling X, empty when undefined
  oxidation_states   common oxidation states plus every state that has an
                     ionic radius; {0} for elements without any state
  ionic_radii        one radius per oxidation state
"""
import math
import sys
import warnings

from pymatgen.core import Element

warnings.filterwarnings("ignore")

FALLBACK_RADIUS = {"At": 1.40, "Fr": 2.60, "Fm": 1.75, "Md": 1.75, "No": 1.75, "Lr": 1.75}


def fmt(x):
    return repr(round(float(x), 6))


def radius(e):
    for r in (e.atomic_radius, e.atomic_radius_calculated, e.metallic_radius):
        if r is not None:
            return float(r)
    return FALLBACK_RADIUS[e.symbol]


def main():
    extended = "--extended" in sys.argv
    if extended:
        print("symbol,oxidation_states")
    else:
        print("symbol,atomic_number,atomic_mass,empirical_radius,electronegativity,"
              "period,group,oxidation_states,ionic_radii")
    for z in range(1, 104):
        e = Element.from_Z(z)
        radii = {int(k): float(v) for k, v in e.ionic_radii.items()}
        states = sorted(set(int(s) for s in e.common_oxidation_states) | set(radii))
        if not states:
            states = [0]
        if extended:
            ext = sorted(set(int(s) for s in e.oxidation_states) | set(states))
            print(f"{e.symbol},{';'.join(str(s) for s in ext)}")
            continue
        x = e.X
        en = "" if x is None or math.isnan(x) else fmt(x)
        ionic = ";".join(f"{k}:{fmt(v)}" for k, v in sorted(radii.items()))
        print(
            f"{e.symbol},{z},{fmt(e.atomic_mass)},{fmt(radius(e))},{en},"
            f"{e.row},{e.group},{';'.join(str(s) for s in states)},{ionic}"
        )


if __name__ == "__main__":
    main()
