"""Rate versus sensing accuracy on one narrowband channel draw.

Sweeps the weight between the two goals for both duplex modes and prints the
sum rate, the summed CRB and the root-CRB in degrees.

    python demos/tradeoff.py
"""

import numpy as np

from isacsim.experiments import SystemConfig, run_point
from isacsim.metrics import evaluate, root_crb_deg

config = SystemConfig(band="narrow", sca={"restarts": 1})
print(f"{'mode':<5} {'w':>4} {'R [bit/s/Hz]':>13} {'CRB [rad^2]':>12} {'root-CRB [deg]':>15}")
for mode in ("full", "half"):
    for w in np.linspace(0.0, 1.0, 6):
        design, state, channels = run_point(config, mode, float(w), seed=0)
        m = evaluate(design, channels, config.budget())
        print(f"{mode:<5} {w:4.1f} {m['R']:13.3f} {m['C']:12.3e} {root_crb_deg(m['C']):15.4f}")
