"""Regenerate the bundled mass attenuation tables.

Values come from the Elam/Ravel/Sieber photon cross-section tables as packaged
by `xraydb` (pip install xraydb). Compounds are mass-fraction weighted sums of
elemental total cross sections (photoelectric + coherent + incoherent).

    python3 generate_tables.py

Absorption edges are written as two samples 1 eV apart: the value 5 eV below
the edge followed by the value 5 eV above it (the spline edge
    sits a few eV from the tabulated edge energy).
"""
import xraydb

E_MIN_KEV = 10.0
E_MAX_KEV = 150.0
STEP_KEV = 0.5

COMPOSITIONS = {
    "water": {"H": 0.111894, "O": 0.888106},
    # ICRU-44 cortical bone
    "bone": {
        "H": 0.034, "C": 0.155, "N": 0.042, "O": 0.435, "Na": 0.001,
        "Mg": 0.002, "P": 0.103, "S": 0.003, "Ca": 0.225,
    },
    "iodine": {"I": 1.0},
    "gadolinium": {"Gd": 1.0},
    "aluminum": {"Al": 1.0},
}


def mu(comp, energy_ev):
    return sum(w * float(xraydb.mu_elam(el, energy_ev)) for el, w in comp.items())


def edges_in_range(comp):
    out = []
    for el in comp:
        for name, edge in xraydb.xray_edges(el).items():
            e_kev = edge.energy / 1000.0
            if E_MIN_KEV < e_kev < E_MAX_KEV:
                out.append(e_kev)
    return sorted(set(out))


def write_table(name, comp):
    edges = edges_in_range(comp)
    n = int(round((E_MAX_KEV - E_MIN_KEV) / STEP_KEV))
    rows = [(E_MIN_KEV + k * STEP_KEV, None) for k in range(n + 1)]
    samples = []
    for e_kev, _ in rows:
        if any(abs(e_kev - edge) < 0.01 for edge in edges):
            continue
        samples.append((e_kev, mu(comp, e_kev * 1000.0)))
    for edge in edges:
        samples.append((edge - 0.001, mu(comp, edge * 1000.0 - 5.0)))
        samples.append((edge, mu(comp, edge * 1000.0 + 5.0)))
    samples.sort()
    with open(f"{name}.csv", "w", encoding="utf-8") as fh:
        fh.write("energy_keV,mass_attenuation_cm2_g\n")
        for e, m in samples:
            fh.write(f"{e:.3f},{m:.6e}\n")


if __name__ == "__main__":
    for name, comp in COMPOSITIONS.items():
        write_table(name, comp)
