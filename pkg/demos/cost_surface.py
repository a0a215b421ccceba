"""System-cost surfaces over PV x wind forecast errors.

Writes one CSV and one SVG heat map per line-limit scale, then prints the
error pairs whose cost matches the zero-error cost.

    python demos/cost_surface.py [out_dir]
"""

import sys

import numpy as np

from mmnowcast import harness

out = sys.argv[1] if len(sys.argv) > 1 else "surface_out"
res = harness.run_cost_surface(out_dir=out)
print(f"zero-error system cost: {res.base_cost:.4f}")
grid = res.surfaces[1.0]
flat = np.isclose(grid, res.base_cost, rtol=1e-3)
pairs = [(float(res.pv_errors[i]), float(res.wind_errors[j])) for i, j in zip(*np.nonzero(flat))
         if res.pv_errors[i] != 0 or res.wind_errors[j] != 0]
print(f"{len(pairs)} nonzero error pairs within 0.1% of it, e.g. {pairs[:6]}")
ratio = res.surfaces[0.5] / np.maximum(grid, 1e-12)
print(f"halved line limits raise cost by up to {100 * (ratio.max() - 1):.1f}% across the grid")
print(f"written to {out}/")
