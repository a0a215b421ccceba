"""Two-stage dispatch on the bundled 6-bus case, and its gradient.

Sweeps the PV forecast around the true value and prints the system cost with
the layer's derivative next to a central difference.

    python demos/opf_walkthrough.py
"""

import numpy as np

from mmnowcast import OpfLayer, SystemInstant, builtin_ieee6

case = builtin_ieee6()
layer = OpfLayer(case)
load = 180.0 * case.load_shares()
truth = np.array([60.0, 40.0])

print(f"{'PV forecast':>11} {'C_sch':>9} {'C_rd':>8} {'C_sys':>9} {'dC/dPV':>8} {'FD':>8}  flag")
for pv in (40.0, 50.0, 55.0, 60.0, 65.0, 70.0, 80.0):
    inst = SystemInstant(load, truth, [pv, truth[1]])
    b = layer.system_cost(inst)
    g = layer.system_cost_gradient(inst)
    h = 1e-3
    fd = (layer.system_cost(inst.with_prediction([pv + h, truth[1]])).system
          - layer.system_cost(inst.with_prediction([pv - h, truth[1]])).system) / (2 * h)
    print(f"{pv:11.1f} {b.schedule:9.2f} {b.redispatch:8.2f} {b.system:9.2f} {g.grad[0]:8.3f} {fd:8.3f}  "
          f"{'kink' if g.approximate else ''}")

inst = SystemInstant(load, truth, [70.0, 40.0])
s = layer.schedule(inst)
r = layer.redispatch(inst, s)
print("\nday-ahead dispatch  ", np.round(s.dispatch, 2) + 0.0)
print("redispatch up       ", np.round(r.up, 2) + 0.0)
print("redispatch down     ", np.round(r.down, 2) + 0.0)
print("real-time curtailment", np.round(r.curtailment, 2) + 0.0)
