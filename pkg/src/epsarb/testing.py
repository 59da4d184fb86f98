"""Seeded generators for markets and path laws, used by the test batteries
and the demo scripts."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .market import MarketModel


def random_market(rng: np.random.Generator, T: Optional[int] = None,
                  d: Optional[int] = None, max_leaves: int = 12,
                  price_scale: float = 1.0, drift_scale: float = 0.5) -> MarketModel:
    """A random event tree: T <= 3, d <= 2, at most ``max_leaves`` leaves.

    Prices follow a random walk with a random per-asset drift, so both
    arbitrage-prone and benign regimes appear; sibling probabilities are
    bounded away from zero.
    """
    T = int(rng.integers(1, 4)) if T is None else T
    d = int(rng.integers(1, 3)) if d is None else d
    drift = rng.normal(0.0, drift_scale, size=d)
    nodes = [{"id": "n0", "time": 0, "parent": None, "cond_prob": 1.0,
              "prices": rng.normal(0.0, price_scale, size=d)}]
    frontier = [0]
    count = 1
    leaves = 1
    for t in range(1, T + 1):
        next_frontier = []
        for v in frontier:
            room = max_leaves - leaves + 1
            k = int(rng.integers(1, min(3, max(1, room)) + 1))
            leaves += k - 1
            probs = rng.uniform(0.2, 1.0, size=k)
            probs /= probs.sum()
            for c in range(k):
                step = drift + rng.normal(0.0, price_scale, size=d)
                nodes.append({"id": f"n{count}", "time": t, "parent": nodes[v]["id"],
                              "cond_prob": float(probs[c]),
                              "prices": nodes[v]["prices"] + step})
                next_frontier.append(count)
                count += 1
        frontier = next_frontier
    return MarketModel.from_nodes(T, d, nodes)


def random_martingale_market(rng: np.random.Generator, T: int = 2, d: int = 1,
                             scale: float = 1.0) -> MarketModel:
    """A binary recombining-style tree whose increments have zero conditional mean."""
    nodes = [{"id": "n0", "time": 0, "parent": None, "cond_prob": 1.0,
              "prices": rng.normal(0.0, scale, size=d)}]
    frontier = [0]
    count = 1
    for t in range(1, T + 1):
        next_frontier = []
        for v in frontier:
            p = float(rng.uniform(0.25, 0.75))
            step = np.abs(rng.normal(0.0, scale, size=d)) + 0.1
            up = step * (1.0 - p) / p
            for cond, move in ((p, up), (1.0 - p, -step)):
                nodes.append({"id": f"n{count}", "time": t, "parent": nodes[v]["id"],
                              "cond_prob": cond, "prices": nodes[v]["prices"] + move})
                next_frontier.append(count)
                count += 1
        frontier = next_frontier
    return MarketModel.from_nodes(T, d, nodes)


def perturb_prices(rng: np.random.Generator, model: MarketModel,
                   magnitude: float = 0.1) -> MarketModel:
    """Same tree and probabilities, prices shifted by iid noise."""
    nodes = []
    for i in range(model.n_nodes):
        par = int(model.parent[i])
        nodes.append({"id": model.ids[i], "time": int(model.times[i]),
                      "parent": None if par < 0 else model.ids[par],
                      "cond_prob": float(model.cond_prob[i]),
                      "prices": model.prices[i] + rng.normal(0.0, magnitude, size=model.d)})
    return MarketModel.from_nodes(model.T, model.d, nodes)


def random_path_law(rng: np.random.Generator, max_atoms: int = 5, T: int = 1,
                    d: int = 1, levels: int = 2) -> MarketModel:
    """A small discrete path law whose prefixes collide (non-trivial tree).

    Coordinates are drawn from a per-time grid of ``levels`` values so that
    distinct atoms share ancestors with positive probability.
    """
    m = int(rng.integers(2, max_atoms + 1))
    grids = [np.sort(rng.uniform(0.0, 1.0, size=levels)) for _ in range(T + 1)]
    paths = np.zeros((m, T + 1, d))
    for a in range(m):
        for t in range(T + 1):
            for i in range(d):
                paths[a, t, i] = grids[t][int(rng.integers(0, levels))]
    # merge duplicate atoms by weight
    probs = rng.uniform(0.2, 1.0, size=m)
    probs /= probs.sum()
    return MarketModel.from_paths(paths, probs)
