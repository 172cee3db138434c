"""
Model-free learning with and without a dispatch prior
=====================================================

``mf-rl`` starts from the uniform random turn-by-turn policy. ``hybrid``
first extracts the policy that non-committed normalised dispatch induces,
imitates it, and then continues with the same learner. Both curves are
written to CSV for plotting.
"""

from pathlib import Path

import numpy as np

from fleetsim import (
    Trainer, TrainerConfig, all_pairs_shortest, build_lattice, extract_effective_policy, generate_random_demand,
    imitation_init, variant_router,
)
from fleetsim.rl import write_curve

net = build_lattice(10, 10, 1, 10, seed=1)
tt = all_pairs_shortest(net)
demand = generate_random_demand(net, seed=2, n_c=0.3)
epochs = 60

###############################################################################
# The dispatch prior.

router = variant_router("non-committed-normalized", tt, demand.g)
effective, visited, _ = extract_effective_policy(net, tt, demand, router, 20, 50_000, seed=[0, 3])
init, info = imitation_init(effective)
print(f"imitation: {info['steps']} Adam steps, max row TV {init.total_variation(effective).max():.1e}")

###############################################################################
# Matched seeds: both learners see the same commuters in every epoch.

curves = {}
for name, start in (("mf-rl", None), ("hybrid", init)):
    trainer = Trainer(TrainerConfig(epochs=epochs, seed=0), net, tt, demand, start)
    trainer.run()
    curves[name] = trainer.curve

out = Path("demo_output")
out.mkdir(exist_ok=True)
for name, curve in curves.items():
    write_curve(out / f"{name}.csv", curve)
    reward = np.array([r["reward_avg"] for r in curve])
    print(f"{name:<7} first epoch {reward[0]:.3f}  last-10 mean {reward[-10:].mean():.3f}")
