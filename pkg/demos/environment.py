"""Build a random multi-agent MDP, inspect its chain and solve for the TDC fixed point."""
import numpy as np

from dectdc import fixed_point_for, make_env, mixing_estimate, stationary_distribution
from dectdc.ratios import ratio_extrema

env = make_env(seed=1)
mdp, pol = env.mdp, env.policies
print(f"{mdp.n_states} states, {mdp.n_agents} agents, {mdp.n_joint} joint actions, gamma={mdp.gamma}")

# state chain under the behavior policy
mu = stationary_distribution(mdp, pol)
nu, delta = mixing_estimate(mdp, pol)
print("stationary distribution:", np.round(mu, 3))
print(f"mixing: TV distance <= {nu:.3g} * {delta:.3g}^t")

rho_min, rho_max = ratio_extrema(pol)
print(f"global importance ratio range [{rho_min:.3f}, {rho_max:.3f}]")

fp = fixed_point_for(env)
print("theta* =", np.round(fp.theta_star, 4))
print(f"lambda1={fp.lambda1:.4g}, lambda2={fp.lambda2:.4g}")
