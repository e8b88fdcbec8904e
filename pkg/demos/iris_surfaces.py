"""Decision surfaces of a hard tree and its softened version, side by side.

Exports two CSV grids over (petal length, petal width) with the other two
features frozen at their training means. The hard tree partitions the plane
into axis-aligned boxes with razor edges; the soft tree blurs each edge over
a band whose width is set by the sigmoid gain, which is exactly what the
match lines do in hardware. Also prints a coarse ASCII view of both.
"""

import numpy as np

from camforest import init_sdt, prepared, train_dt, train_sdt
from camforest.robust import decision_surface, surface_to_csv

train, test = prepared("iris", test_fraction=0.2, seed=0)
dt = train_dt(train, 3)
sdt = train_sdt(init_sdt(dt), train, epochs=200, learning_rate=0.05,
                seed=0, beta=20.0)

fx = train.feature_names.index("petal_length")
fy = train.feature_names.index("petal_width")
fixed = train.features.mean(axis=0)

for name, model in [("hard", dt), ("soft", sdt)]:
    xs, ys, grid = decision_surface(model, (fx, fy), fixed,
                                    grid_resolution=120)
    out = f"iris_surface_{name}.csv"
    surface_to_csv(xs, ys, grid, out)
    print(f"{name} surface -> {out}  ({grid.shape[0]}x{grid.shape[1]} cells)")

# coarse view: one letter per winning class, '.' where no class dominates
print()
for name, model in [("hard", dt), ("soft", sdt)]:
    xs, ys, grid = decision_surface(model, (fx, fy), fixed,
                                    grid_resolution=28)
    print(f"{name} tree over (petal_length, petal_width):")
    letters = np.array(list("sva"))       # setosa / versicolor / virginica
    for j in range(len(ys) - 1, -1, -1):
        row = ""
        for i in range(len(xs)):
            p = grid[i, j]
            row += letters[int(np.argmax(p))] if p.max() > 0.5 else "."
        print("   " + row)
    print()
