"""Where the power goes in the wideband design.

Runs the sensing-leaning weight w = 0.1 on a few channel draws and splits each
transceiver's budget into per-tap beam power and dedicated-sensing power.

    python demos/wideband_power.py
"""

import numpy as np

from isacsim.experiments import SystemConfig, run_point

config = SystemConfig(band="wide", sca={"restarts": 1})
for seed in range(3):
    design, state, _ = run_point(config, "full", 0.1, seed)
    taps = np.sum(np.abs(design.beams[:, 0]) ** 2, axis=-1)  # (k, l), slot 0
    sensing = design.sensing_power()[:, 0]
    print(f"seed {seed}: {state.t} SCA iterations, KKT residual {state.kkt_residual:.1e}")
    for k, name in enumerate("AB"):
        total = taps[k].sum() + sensing[k]
        print(f"  {name}: tap powers {np.round(taps[k], 3)}, sensing {sensing[k]:.3f}"
              f" ({sensing[k] / total:.0%} of {total:.2f})")
