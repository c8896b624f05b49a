"""Circle backgrounds shared by the mode-sum and observable tests."""
from hdirac.geometry import parse_background


def circle(L=1.0, m="0", a=0.0, spin="antiperiodic"):
    return parse_background(f'coords = t, x\nm = "{m}"\nA[1] = "{a}"\n'
                            f"circumference = {L!r}\nspin_structure = {spin}\n")
