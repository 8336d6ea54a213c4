"""Seeded, splittable random streams (Philox counter-based bit generator)."""

import os

import numpy as np

SEED_ENV = "TDF_SEED"
DEFAULT_SEED = 0


def resolve_seed(seed=None):
    """Seed from ``TDF_SEED`` if set, else ``seed``, else the package default."""
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        return int(env)
    return DEFAULT_SEED if seed is None else int(seed)


def make_rng(seed=None):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(resolve_seed(seed))))


def spawn_rngs(seed, n):
    """``n`` statistically independent generators derived from one seed."""
    children = np.random.SeedSequence(resolve_seed(seed)).spawn(n)
    return [np.random.Generator(np.random.Philox(s)) for s in children]
