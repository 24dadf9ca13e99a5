"""
Power flow and voltage sensitivities on a radial feeder
=======================================================

"""

import numpy as np
from netdroop import builtin_feeder, linearize, solve_pf, solve_pf_newton

# the packaged 37-bus feeder, per-unit on a 10 MVA base
feeder = builtin_feeder("ieee37")
print(feeder.name, "buses:", feeder.n, "inverters:", int(feeder.inverter_mask.sum()))

# nominal loads are negative injections
p, q = feeder.nominal_load
sweep = solve_pf(feeder, p, q)
newton = solve_pf_newton(feeder, p, q)
print("lowest voltage %.4f pu at bus %d" % (sweep.v_mag.min(), sweep.v_mag.argmin() + 1))
print("sweep vs Newton: %.1e" % np.abs(sweep.v_mag - newton.v_mag).max())

# finite-difference sensitivities around the loaded point
model = linearize(feeder, p, q)
print("R, B shapes:", model.R.shape, model.B.shape)
print("||H||_2 = %.4f" % np.linalg.norm(model.H, 2))

# buses far from the substation move the most per unit of injection
row_norm = np.linalg.norm(model.H, axis=1)
print("most sensitive buses:", (np.argsort(-row_norm)[:5] + 1).tolist())

# how far the affine model drifts when the loads double
v_lin = model.predict(2 * p, 2 * q)
v_true = solve_pf(feeder, 2 * p, 2 * q).v_mag
print("linearization error at 2x load: %.2e pu" % np.linalg.norm(v_true - v_lin))
