"""
The effective policy of a known policy
======================================

Driving the fleet with a turn-by-turn policy and counting the moves vacant
taxis make recovers that policy. The error in each row is sampling noise, so
it shrinks like one over the square root of the visits.
"""

import numpy as np

from fleetsim import PolicyMatrix, PolicyRouter, all_pairs_shortest, build_lattice, generate_random_demand, run_epoch
from fleetsim.dispatch import EffectivePolicyCounters, effective_policy

net = build_lattice(10, 10, 1, 10, seed=1)
tt = all_pairs_shortest(net)
demand = generate_random_demand(net, seed=2, n_c=0.3)

raw = np.random.default_rng(0).uniform(0.2, 1.0, len(net.indices))
known = PolicyMatrix(net, raw / np.repeat(np.add.reduceat(raw, net.indptr[:-1]), net.degree))

for taxis in (20, 80):
    r = run_epoch(net, tt, demand, PolicyRouter(known), taxis, 50_000, 1, max_samples=0)
    est, _ = effective_policy(net, EffectivePolicyCounters(r.visits, r.moves))
    tv = est.total_variation(known)
    print(f"{taxis} taxis: visits per row {r.visits.min()}..{r.visits.max()}")
    for label, lo, hi in (("100-299", 100, 300), ("300-999", 300, 1000), ("1000+", 1000, np.inf)):
        sel = (r.visits >= lo) & (r.visits < hi)
        if sel.any():
            print(f"   rows with {label} visits: max TV {tv[sel].max():.3f}  "
                  f"mean TV*sqrt(visits) {np.mean(tv[sel] * np.sqrt(r.visits[sel])):.2f}")
