"""Transient simulation of one CAM row and the behavioral fit on top of it.

A stored row is a conjunction of threshold conditions, one 2-FET cell per
condition. The script discharges the match line for a few inputs, shows the
sensed soft output as the search voltage sweeps across a boundary, and then
fits the (a, b, k) behavioral model to a full input grid, printing the
agreement statistics.
"""

import numpy as np

from camforest import circuit

p = circuit.CircuitParams()
row = [(0, "lt", -0.3), (1, "lt", 0.27), (0, "lt", -0.75), (1, "lt", 0.77)]

print("row:", ", ".join(f"f{f} {op} {t:+.2f}" for f, op, t in row))
print(f"precharge {p.v_precharge} V, sense at {p.t_sense * 1e9:.0f} ns, "
      f"C_ML {p.c_ml * 1e12:.0f} pF")

# -- match-line discharge for a matching vs a mismatching input ------------------

vth, sign, feat = circuit.program_conditions(row, p)
for label, x in [("matching", [-0.9, -0.5]), ("mismatching", [0.5, 0.9])]:
    u = -sign * np.asarray(x, dtype=float)[feat]
    trace = circuit.discharge_row(vth, u, p)
    print(f"{label:12s} input {x}: ML {p.v_precharge:.2f} -> "
          f"{trace.v_ml[-1]:.4f} V at t_sense")

# -- soft boundary: sweep feature 0 through its tightest threshold ----------------

xs = np.linspace(-1.0, -0.5, 11)
X = np.column_stack([xs, np.full_like(xs, -0.5)])
sensed = circuit.row_sense_sweep(row, X, p)
print("\nsweep of feature 0 (feature 1 held matching at -0.5):")
for x, s in zip(xs, sensed):
    bar = "#" * int(round(40 * s))
    print(f"  x0 = {x:+.2f}  sensed {s:.3f}  {bar}")

# -- fit the behavioral model to the circuit --------------------------------------

beh, fit, grid, grid_sensed = circuit.fit_row_behavior(row, p, grid_points=13)
print(f"\nfit over {fit.n_points} grid points: "
      f"a={beh.a:.4f} b={beh.b:.4f} k={beh.k:.2f}")
print(f"r2 = {fit.r2:.6f}, rmse = {fit.rmse:.5f}, "
      f"{'product' if fit.product_form else 'blended sum'} form")
print(f"effective single-cell gain: k = {circuit.calibrate_gain(p):.2f}")
