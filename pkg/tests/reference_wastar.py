"""Textbook single-model weighted A*, written independently of the planner module.

Used as the reference for the degenerate K = 1 case. It shares only the state
discretization and the action generator, so both searches see the same graph.
"""

import heapq
import itertools
import math

from mdeplan.planner import generate_actions, state_key
from mdeplan.world import edge_cost, skill_precondition


def weighted_astar(start, task, model, cfg):
    counter = itertools.count()
    k0 = state_key(start, cfg)
    best_g = {k0: 0.0}
    states = {k0: start}
    closed = set()
    heap = [(cfg.epsilon * task.heuristic(start), -0.0, next(counter), k0)]
    expansions = 0
    while heap:
        f, neg_g, _, k = heapq.heappop(heap)
        if k in closed or -neg_g != best_g[k]:
            continue
        s = states[k]
        if task.goal(s):
            return best_g[k]
        if expansions >= cfg.expansion_budget:
            return math.inf
        expansions += 1
        closed.add(k)
        for a in generate_actions(s, k, task, cfg):
            if not skill_precondition(s, a):
                continue
            s2 = model(s, a)
            k2 = state_key(s2, cfg)
            if k2 in closed:
                continue
            g2 = best_g[k] + edge_cost(s, a, s2)
            if g2 < best_g.get(k2, math.inf):
                best_g[k2] = g2
                states[k2] = s2
                heapq.heappush(heap, (g2 + cfg.epsilon * task.heuristic(s2), -g2, next(counter), k2))
    return math.inf
