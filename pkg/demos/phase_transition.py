"""
Waiting time against fleet size
===============================

With few taxis the fleet is oversaturated: queues keep growing and adding a
taxi cuts the waiting time a lot. Past the transition every commuter is met
quickly and extra taxis barely help.
"""

import numpy as np

from fleetsim import PolicyRouter, all_pairs_shortest, build_lattice, generate_random_demand, random_policy, run_epoch

net = build_lattice(10, 10, 1, 10, seed=1)
tt = all_pairs_shortest(net)
demand = generate_random_demand(net, seed=2, n_c=0.3)
router = PolicyRouter(random_policy(net))

fleet = [5, 10, 20, 40, 80, 160]
rows = []
for k in fleet:
    results = [run_epoch(net, tt, demand, router, k, 10_000, [s, 2, 0], max_samples=0) for s in range(5)]
    rows.append((k, np.mean([r.average_waiting for r in results]), np.mean([r.average_reward for r in results])))

print(" taxis   waiting   reward")
for k, w, rew in rows:
    print(f"{k:6d} {w:9.2f} {rew:8.3f}")

###############################################################################
# The drop from 5 to 10 taxis against the drop from 80 to 160 taxis:

w = np.array([r[1] for r in rows])
print(f"ratio of decreases: {(w[0] - w[1]) / (w[4] - w[5]):.1f}")
