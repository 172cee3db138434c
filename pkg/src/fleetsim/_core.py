"""Compiled inner loop of the simulation.

State lives in plain integer arrays so a run can be advanced chunk by chunk
from Python. Field offsets below index the second axis of those arrays.
"""

import numpy as np
from numba import njit

# taxi fields
T_NODE = 0  # tail node of the current edge (or the node the taxi sits at)
T_SLOT = 1  # CSR slot of the edge being travelled; -1 while at a node
T_D = 2  # time-steps travelled along the current edge
T_DEST = 3  # passenger destination; -1 when vacant
T_TARGET = 4  # dispatch target; -1 when none
T_CID = 5  # commuter on board
T_OCC = 6  # cumulative occupied time-steps
N_TAXI_FIELDS = 7

# commuter fields
C_ORIG = 0
C_DEST = 1
C_BIRTH = 2
C_NEXT = 3  # next commuter in the same node queue
C_PICK = 4
C_DROP = 5
N_COMMUTER_FIELDS = 6

# counters
K_BIRTHS = 0
K_DROPPED = 1
K_PICKED = 2
K_DELIVERED = 3
K_REWARD = 4
K_WAITING = 5
K_NREC = 6
K_VIOLATIONS = 7
K_ARRIVAL_PTR = 8
K_VACANT_MOVES = 9
N_COUNTERS = 10

ROUTER_POLICY = 0
ROUTER_DISPATCH = 1


@njit(cache=True)
def _push(node, cid, commuters, head, tail, count):
    commuters[cid, C_NEXT] = -1
    if count[node] == 0:
        head[node] = cid
    else:
        commuters[tail[node], C_NEXT] = cid
    tail[node] = cid
    count[node] += 1


@njit(cache=True)
def _pop(node, commuters, head, tail, count):
    cid = head[node]
    head[node] = commuters[cid, C_NEXT]
    count[node] -= 1
    if count[node] == 0:
        head[node] = -1
        tail[node] = -1
    return cid


@njit(cache=True)
def _pick_slot(cdf, lo, hi, u):
    for k in range(lo, hi - 1):
        if u < cdf[k]:
            return k
    return hi - 1


@njit(cache=True)
def _pick_target(cdf_row, u):
    # binary search for the first cumulative weight above u
    lo = 0
    hi = cdf_row.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if u < cdf_row[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


@njit(cache=True)
def _check(taxis, commuters, head, count, counters, travel, cap):
    bad = 0
    in_transit = 0
    for l in range(taxis.shape[0]):
        if taxis[l, T_DEST] >= 0:
            in_transit += 1
            if taxis[l, T_CID] < 0:
                bad += 1
        elif taxis[l, T_CID] >= 0:
            bad += 1
        s = taxis[l, T_SLOT]
        if s >= 0 and not (0 <= taxis[l, T_D] < travel[s]):
            bad += 1
    waiting = 0
    for i in range(count.shape[0]):
        c = count[i]
        if c < 0 or c > cap:
            bad += 1
        n = 0
        cid = head[i]
        while cid >= 0 and n <= c:
            n += 1
            cid = commuters[cid, C_NEXT]
        if n != c:
            bad += 1
        waiting += c
    accounted = waiting + in_transit + counters[K_DELIVERED] + counters[K_DROPPED]
    if accounted != counters[K_BIRTHS]:
        bad += 1
    if counters[K_PICKED] != in_transit + counters[K_DELIVERED]:
        bad += 1
    return bad


@njit(cache=True)
def advance(
    t0, t1,
    indptr, indices, travel, self_slot, next_slot,
    router, policy_cdf, dispatch_cdf, dispatch_gate, committed,
    birth_t, birth_node, birth_dest,
    uniforms,
    taxis, commuters, head, tail, count, counters,
    occ, queue_total, visits, moves,
    rec_state, rec_slot, rec_time, rec_taxi, rec_own,
    cap, validate,
):
    n_taxis = taxis.shape[0]
    n_births = birth_t.shape[0]
    max_rec = rec_state.shape[0]
    for t in range(t0, t1):
        # arrivals
        ptr = counters[K_ARRIVAL_PTR]
        while ptr < n_births and birth_t[ptr] == t:
            node = birth_node[ptr]
            commuters[ptr, C_ORIG] = node
            commuters[ptr, C_DEST] = birth_dest[ptr]
            commuters[ptr, C_BIRTH] = t
            commuters[ptr, C_PICK] = -1
            commuters[ptr, C_DROP] = -1
            counters[K_BIRTHS] += 1
            if count[node] >= cap:
                counters[K_DROPPED] += 1
            else:
                _push(node, ptr, commuters, head, tail, count)
            ptr += 1
        counters[K_ARRIVAL_PTR] = ptr

        for l in range(n_taxis):
            # motion
            s = taxis[l, T_SLOT]
            if s >= 0:
                taxis[l, T_D] += 1
                if taxis[l, T_D] >= travel[s]:
                    taxis[l, T_NODE] = indices[s]
                    taxis[l, T_SLOT] = -1
                    taxis[l, T_D] = 0
            if taxis[l, T_SLOT] >= 0:
                continue
            node = taxis[l, T_NODE]
            # drop-off
            if taxis[l, T_DEST] == node:
                cid = taxis[l, T_CID]
                commuters[cid, C_DROP] = t
                taxis[l, T_DEST] = -1
                taxis[l, T_CID] = -1
                counters[K_DELIVERED] += 1
            # pick-up
            if taxis[l, T_DEST] < 0:
                target = taxis[l, T_TARGET]
                if target == node:
                    taxis[l, T_TARGET] = -1
                    target = -1
                blocked = committed and target >= 0
                if count[node] > 0 and not blocked:
                    cid = _pop(node, commuters, head, tail, count)
                    commuters[cid, C_PICK] = t
                    taxis[l, T_DEST] = commuters[cid, C_DEST]
                    taxis[l, T_CID] = cid
                    taxis[l, T_TARGET] = -1
                    counters[K_PICKED] += 1
            # routing decision
            if taxis[l, T_DEST] >= 0:
                taxis[l, T_SLOT] = next_slot[node, taxis[l, T_DEST]]
            else:
                if router == ROUTER_POLICY:
                    slot = _pick_slot(policy_cdf, indptr[node], indptr[node + 1], uniforms[t - t0, l, 0])
                else:
                    target = taxis[l, T_TARGET]
                    if target < 0:
                        if uniforms[t - t0, l, 1] < dispatch_gate[node]:
                            target = _pick_target(dispatch_cdf[node], uniforms[t - t0, l, 0])
                        else:
                            target = node
                    if target == node:
                        slot = self_slot[node]
                        taxis[l, T_TARGET] = -1
                    else:
                        slot = next_slot[node, target]
                        taxis[l, T_TARGET] = target
                taxis[l, T_SLOT] = slot
                visits[node] += 1
                moves[slot] += 1
                counters[K_VACANT_MOVES] += 1
                k = counters[K_NREC]
                if k < max_rec:
                    rec_state[k] = node
                    rec_slot[k] = slot
                    rec_time[k] = t
                    rec_taxi[k] = l
                    rec_own[k] = taxis[l, T_OCC]
                    counters[K_NREC] = k + 1
            taxis[l, T_D] = 0

        # reward and queue bookkeeping
        n_occ = 0
        for l in range(n_taxis):
            if taxis[l, T_DEST] >= 0:
                n_occ += 1
                taxis[l, T_OCC] += 1
        occ[t] = n_occ
        counters[K_REWARD] += n_occ
        waiting = counters[K_BIRTHS] - counters[K_DROPPED] - counters[K_PICKED]
        queue_total[t] = waiting
        counters[K_WAITING] += waiting
        if validate:
            counters[K_VIOLATIONS] += _check(taxis, commuters, head, count, counters, travel, cap)


def new_state(n_taxis, n_births, n_nodes):
    taxis = np.full((n_taxis, N_TAXI_FIELDS), -1, dtype=np.int64)
    taxis[:, T_D] = 0
    taxis[:, T_OCC] = 0
    commuters = np.full((max(n_births, 1), N_COMMUTER_FIELDS), -1, dtype=np.int64)
    head = np.full(n_nodes, -1, dtype=np.int64)
    tail = np.full(n_nodes, -1, dtype=np.int64)
    count = np.zeros(n_nodes, dtype=np.int64)
    counters = np.zeros(N_COUNTERS, dtype=np.int64)
    return taxis, commuters, head, tail, count, counters
