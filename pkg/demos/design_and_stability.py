"""
Designing droop gains with a stability margin
=============================================

"""

import numpy as np
from netdroop import builtin_feeder, synth_scenario
from netdroop.design import DesignConfig, check_stability, fixed_point_iterate, neuman_error_sweep
from netdroop.pipeline import design_window, fit_window_model
from netdroop.uncertainty import forecast_mu

feeder = builtin_feeder("ieee37")
scenario = synth_scenario(7, "clear_sky", feeder, 900)
window = (0, 900)

# reference profile: the affine model evaluated at zero injection
model = fit_window_model(feeder, scenario, window)
print("delta over the window: %.2e pu" % model.delta)

# nominal design on the window mean, robust design on its min/max box
_, nominal = design_window(feeder, scenario, window, DesignConfig(), model=model)
_, robust = design_window(feeder, scenario, window, DesignConfig(robust=True), model=model)

for name, gains in (("nominal", nominal), ("robust", robust)):
    st = check_stability(model, gains)
    print("%-8s frob %.4f  spec %.4f  rho %.4f  eps %.4f" % (name, st["frob"], st["spec"], st["rho"], gains.epsilon))

# the loop e <- HGe + H mu settles at (I - HG)^-1 H mu
zeros = np.zeros(feeder.n)
mu = forecast_mu(scenario, window, zeros, zeros, feeder).mu
e, history = fixed_point_iterate(model, nominal, mu)
print("fixed point after %d iterations, |e|_inf = %.4f pu" % (len(history) - 1, np.abs(e).max()))

# truncating the inverse at first order, as the design does
alphas = np.linspace(0, 1, 11)
print("truncation error:", np.round(neuman_error_sweep(model, nominal, mu, alphas), 3))

# penalizing the number of active gains leaves only the sensitive buses
sparse = DesignConfig(objective="sparsity", eta_p=3e-3, eta_q=3e-3)
_, few = design_window(feeder, scenario, window, sparse, model=model)
active = (few.g_p != 0) | (few.g_q != 0)
print("sparse design keeps buses", (np.flatnonzero(active) + 1).tolist())
