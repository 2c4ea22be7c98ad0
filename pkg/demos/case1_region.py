"""Build a confidence region around the 50% contour of a standard normal sample.

Run with ``python3 demos/case1_region.py``; writes ``case1_region.svg`` next to
this script and prints the region's volume and whether it covers the truth.
"""

from pathlib import Path

import numpy as np

from levelconf.geometry import contour_svg, extract_contour
from levelconf.harness import confidence_region
from levelconf.models import Elliptic
from levelconf.regions import covers_isosurface, lebesgue_volume, mask_boundary

model = Elliptic(1.0)
c = model.level_of_probability(0.5)
data = model.sample(500, np.random.default_rng(0))

for method in ("V.e", "V", "H"):
    built, run = confidence_region(data, c, method, alpha=0.1, B=100, seed=1)
    region = built.region
    vol = lebesgue_volume(region, built.grid)
    covered = covers_isosurface(region, model, c)
    print(f"{method:4s} quantile={built.quantile:.4g} volume={vol:.3f} covers truth={covered}")

built, run = confidence_region(data, c, "V.e", alpha=0.1, B=100, seed=1)
outline = mask_boundary(built.region.mask(built.grid), built.grid)
truth = model.true_contour(c)
estimate = extract_contour(run.f_hat, run.grid, c)
svg = contour_svg([(outline, "#888888"), (estimate, "#1f77b4"), (truth, "#d62728")],
                  bounds=(-3, -3, 3, 3))
out = Path(__file__).with_name("case1_region.svg")
out.write_text(svg, encoding="utf-8")
print(f"wrote {out}")
