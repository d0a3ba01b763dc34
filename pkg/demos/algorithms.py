"""Run the three decentralized learners on one shared trajectory and compare errors."""
from dectdc import RunConfig, build_fully_connected, fixed_point_for, make_env, run
from dectdc.decentral import draw_trajectory

env = make_env(seed=1)
fp = fixed_point_for(env)
v = build_fully_connected(env.mdp.n_agents)
traj = draw_trajectory(env, seed=1, length=20_000)

configs = [
    RunConfig(algorithm="td0", batch_size=1, iterations=20_000, alpha=0.01, metrics_every=100),
    RunConfig(algorithm="alg1", batch_size=100, iterations=200, alpha=1.0, beta=0.01),
    RunConfig(algorithm="alg2", batch_size=100, iterations=200, alpha=1.0, beta=0.01,
              gossip_rounds=7, post_averaging=20),
]
for cfg in configs:
    tr = run(cfg, env, fp, v, trajectory=traj)
    last = tr.records[-1]
    print(f"{cfg.algorithm:5s} N={cfg.batch_size:3d}: convErr {last.conv_err:.4f}, "
          f"consErr {last.cons_err:.2e}, parameter rounds {last.param_comm}, "
          f"ratio rounds {last.ratio_comm}")
