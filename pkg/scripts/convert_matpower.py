"""Regenerate the bundled IEEE case files from PYPOWER's case data.

    pip install pypower
    python scripts/convert_matpower.py src/graphse/data
"""
import sys
from pathlib import Path

from pypower.case14 import case14
from pypower.case118 import case118

from graphse.case_io import case_from_matpower, write_case

out = Path(sys.argv[1] if len(sys.argv) > 1 else ".")
for name, fn in (("ieee14", case14), ("ieee118", case118)):
    ppc = fn()
    case = case_from_matpower(ppc["baseMVA"], ppc["bus"], ppc["branch"], name=f"{name} (MATPOWER data)")
    (out / f"{name}.case").write_text(write_case(case))
    print(name, len(case.buses), len(case.branches))
