"""Chemical element symbols and atomic numbers."""

from .errors import UnknownElementError

_SYMBOLS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni "
    "Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I "
    "Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt "
    "Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr"
).split()

ATOMIC_NUMBER = {sym: z for z, sym in enumerate(_SYMBOLS, start=1)}


def check_element(symbol: str) -> str:
    if symbol not in ATOMIC_NUMBER:
        raise UnknownElementError(f"unknown element symbol {symbol!r}")
    return symbol


def atomic_number(symbol: str) -> int:
    check_element(symbol)
    return ATOMIC_NUMBER[symbol]
