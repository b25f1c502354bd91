"""Periodic table symbols and the simplified valence model."""

ELEMENTS = (
    "H", "He",
    "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar",
    "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr",
    "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I", "Xe",
    "Cs", "Ba",
    "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu",
    "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn",
    "Fr", "Ra",
    "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr",
    "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn",
    "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)
assert len(ELEMENTS) == 118

# Maximum common valence.  Multi-valence main-group elements take their
# largest common state (S 6, P 5); metals get a typical coordination bound.
_MAIN_GROUP = {
    "H": 1, "He": 1, "Ne": 1, "Ar": 1, "Kr": 2, "Xe": 8, "Rn": 2, "Og": 2,
    "Li": 1, "Na": 1, "K": 1, "Rb": 1, "Cs": 1, "Fr": 1,
    "Be": 2, "Mg": 2, "Ca": 2, "Sr": 2, "Ba": 2, "Ra": 2,
    "B": 3, "Al": 3, "Ga": 3, "In": 3, "Tl": 3, "Nh": 3,
    "C": 4, "Si": 4, "Ge": 4, "Sn": 4, "Pb": 4, "Fl": 4,
    "N": 3, "P": 5, "As": 5, "Sb": 5, "Bi": 5, "Mc": 5,
    "O": 2, "S": 6, "Se": 6, "Te": 6, "Po": 6, "Lv": 6,
    "F": 1, "Cl": 1, "Br": 1, "I": 1, "At": 1, "Ts": 1,
}
_LANTHANIDES_ACTINIDES = set(ELEMENTS[56:71]) | set(ELEMENTS[88:103])

MAX_VALENCE = {
    sym: _MAIN_GROUP.get(sym, 3 if sym in _LANTHANIDES_ACTINIDES else 6)
    for sym in ELEMENTS
}

# Standard valences used for implicit hydrogen counting in SMILES.
ORGANIC_SUBSET = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
DEFAULT_VALENCES = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5),
    "S": (2, 4, 6), "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}
AROMATIC_SYMBOLS = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S",
                    "se": "Se", "as": "As"}
