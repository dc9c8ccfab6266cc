"""Shared helpers: a hand-built fit, random discrete datasets, and
brute-force oracles that recompute population functionals of a fitted
cell-table model by direct enumeration over cells. The brute-force path
shares no code with the package's moment engine, so agreement between the
two is evidence, not tautology.
"""

import itertools

import numpy as np

from causal_anova import Dataset, Discrete, LearnerConfig, NuisanceFit
from causal_anova.nuisance import CellTableSurface, DiscreteMarginal


def two_by_two_fit() -> NuisanceFit:
    """Fit over two fair binary factors with mu table [[0,1],[2,3]] and
    nu = mu^2 + 1. Small enough that every moment is hand-checkable."""
    mu = np.array([[0.0, 1.0], [2.0, 3.0]])
    marg = DiscreteMarginal((0.0, 1.0), np.array([0.5, 0.5]))
    return NuisanceFit(
        fold=0,
        mu_surface=CellTableSurface(mu),
        nu_surface=CellTableSurface(mu**2 + 1.0),
        marginals=(marg, marg),
        learner="cellmean",
        config=LearnerConfig(learner="cellmean"),
        n_train=8,
    )


def make_discrete_dataset(rng, n, levels, noise=1.0):
    """Random all-Discrete dataset whose levels equal their own codes."""
    cols = tuple(rng.integers(0, size, n).astype(np.float64) for size in levels)
    y = rng.normal(0.0, noise, n) + sum((k + 1.0) * c for k, c in enumerate(cols))
    names = tuple(f"F{k + 1}" for k in range(len(levels)))
    kinds = tuple(Discrete(tuple(float(v) for v in range(size))) for size in levels)
    return Dataset(np.asarray(y, dtype=np.float64), names, cols, kinds)


def brute_tables(data, rows):
    """Cell means of y and y^2 on the given rows, empty cells falling back
    to the row means, plus per-factor level frequencies."""
    dims = tuple(len(kind.levels) for kind in data.kinds)
    mu = np.zeros(dims)
    nu = np.zeros(dims)
    cnt = np.zeros(dims)
    ybar = float(data.outcome[rows].mean())
    y2bar = float((data.outcome[rows] ** 2).mean())
    for i in rows:
        cell = tuple(int(data.codes(k)[i]) for k in range(data.num_factors))
        cnt[cell] += 1
        mu[cell] += data.outcome[i]
        nu[cell] += data.outcome[i] ** 2
    mu = np.where(cnt > 0, mu / np.maximum(cnt, 1), ybar)
    nu = np.where(cnt > 0, nu / np.maximum(cnt, 1), y2bar)
    marg = []
    for k in range(data.num_factors):
        p = np.zeros(dims[k])
        for i in rows:
            p[int(data.codes(k)[i])] += 1
        marg.append(p / p.sum())
    return mu, nu, marg


def brute_mean(table, marg):
    """E[table(W)] under the product of the marginals, cell by cell."""
    dims = table.shape
    total = 0.0
    for cell in itertools.product(*[range(d) for d in dims]):
        w = 1.0
        for k, v in enumerate(cell):
            w *= marg[k][v]
        total += w * table[cell]
    return total


def brute_cond_excluding(table, marg, excluded):
    """E[table | W_{-excluded}] as a full-shape table, constant on the
    integrated-out axes."""
    dims = table.shape
    out = np.zeros(dims)
    ex = sorted(excluded)
    for cell in itertools.product(*[range(d) for d in dims]):
        total = 0.0
        for ex_vals in itertools.product(*[range(dims[k]) for k in ex]):
            inner = list(cell)
            w = 1.0
            for k, v in zip(ex, ex_vals):
                inner[k] = v
                w *= marg[k][v]
            total += w * table[tuple(inner)]
        out[cell] = total
    return out


def brute_block(mu, marg, excluded):
    """E[(E[mu | W_{-excluded}])^2], the unnormalized building block."""
    cond = brute_cond_excluding(mu, marg, excluded)
    return brute_mean(cond * cond, marg)


def brute_cond_given_k(table, marg, k):
    """E[table(W) | W_k = v] for every level v of factor k."""
    dims = table.shape
    out = np.zeros(dims[k])
    for v in range(dims[k]):
        total = 0.0
        for cell in itertools.product(*[range(d) for d in dims]):
            if cell[k] != v:
                continue
            w = 1.0
            for j, u in enumerate(cell):
                if j != k:
                    w *= marg[j][u]
            total += w * table[cell]
        out[v] = total
    return out


def display_phi_if(y, cells, mu, nu, marg, excluded):
    """Uncentered score for block(excluded)/Var as displayed: numerator
    score 2*y*m - m^2 - theta, variance score (y - ybar)^2 - var, combined
    by the ratio delta rule."""
    cond = brute_cond_excluding(mu, marg, excluded)
    theta = brute_mean(cond * cond, marg)
    ey = brute_mean(mu, marg)
    var = brute_mean(nu, marg) - ey**2
    m_at = np.array([cond[c] for c in cells])
    phi_num = 2.0 * y * m_at - m_at**2 - theta
    phi_var = (y - ey) ** 2 - var
    return phi_num / var - theta * phi_var / var**2


def display_phi_eif(y, cells, mu, nu, marg, excluded):
    """Tower-centered score as displayed, with the lumped constants
    (2|S| + K - |S|) * theta and K * var."""
    K = mu.ndim
    S = sorted(excluded)
    cond = brute_cond_excluding(mu, marg, excluded)
    theta = brute_mean(cond * cond, marg)
    ey = brute_mean(mu, marg)
    var = brute_mean(nu, marg) - ey**2
    m_at = np.array([cond[c] for c in cells])
    mu_at = np.array([mu[c] for c in cells])
    nu_at = np.array([nu[c] for c in cells])
    numsc = 2.0 * (y - mu_at) * m_at
    for k in range(K):
        if k in S:
            tab = brute_cond_given_k(mu * cond, marg, k)
            numsc += 2.0 * np.array([tab[c[k]] for c in cells])
        else:
            tab = brute_cond_given_k(cond * cond, marg, k)
            numsc += np.array([tab[c[k]] for c in cells])
    numsc -= (2 * len(S) + (K - len(S))) * theta
    varsc = (y - ey) ** 2 - (nu_at - mu_at**2) - (mu_at - ey) ** 2
    for k in range(K):
        t_nu = brute_cond_given_k(nu, marg, k)
        t_mu = brute_cond_given_k(mu, marg, k)
        varsc += np.array([t_nu[c[k]] - 2.0 * ey * t_mu[c[k]] + ey**2 for c in cells])
    varsc -= K * var
    return numsc / var - theta * varsc / var**2
