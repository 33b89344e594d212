"""Brute-force posterior over changepoints for tiny fixed-parameter models.

Written against scipy.stats directly so it shares no code with the engine.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import stats


def _geometric_pmf(hazards):
    """P(first arrival = t) for t = 1..T, then P(no arrival), given per-tick hazards."""
    out, alive = [], 1.0
    for h in hazards:
        out.append(alive * h)
        alive *= 1.0 - h
    return out + [alive]


def enumerate_posterior(targets, surrogates, *, rates, loc, scale, rho_k, rho_s, rho_e,
                        mu1, mu2, top_weight=1.0, eps=1e-6):
    """Exact marginal CDFs ``P(Gamma_x <= n | data)`` for every source.

    Parameters are plain nested lists: ``rates[i] = (pre, post)``,
    ``loc[j]``/``scale[j]`` likewise, hazards per source. Rates are constant
    in time (no interaction, no noise). Returns an array shaped
    ``(I + J + 1, T)`` in source order targets, surrogates, top.
    """
    targets = np.asarray(targets)
    surrogates = np.asarray(surrogates, dtype=float).reshape(-1, targets.shape[1])
    n_t, horizon = targets.shape
    n_s = surrogates.shape[0]
    values = list(range(1, horizon + 1)) + [math.inf]
    curves = np.zeros((n_t + n_s + 1, horizon))
    total_mass = 0.0

    def hazard_row(base, gk):
        row = []
        for t in range(1, horizon + 1):
            h = base
            for j in range(n_s):
                if gk[j] < t:
                    h += mu1[j] * math.exp(-mu2[j] * (t - gk[j]))
            row.append(min(max(h, 0.0), 1.0 - eps))
        return row

    # the log-likelihood separates over sources given their changepoints
    def lognorm_ll(j, g):
        return sum(stats.lognorm.logpdf(surrogates[j, t - 1], s=scale[j][int(t > g)],
                                        scale=math.exp(loc[j][int(t > g)]))
                   for t in range(1, horizon + 1))

    def target_ll(i, g):
        return sum(stats.poisson.logpmf(targets[i, t - 1], rates[i][int(t > g)])
                   for t in range(1, horizon + 1))

    def top_ll(g):
        e = targets.sum(axis=0)
        return top_weight * sum(
            stats.poisson.logpmf(e[t - 1], sum(r[int(t > g)] for r in rates))
            for t in range(1, horizon + 1))

    ll_k = [[lognorm_ll(j, g) for g in values] for j in range(n_s)]
    ll_s = [[target_ll(i, g) for g in values] for i in range(n_t)]
    ll_e = [top_ll(g) for g in values]
    shift = sum(max(r) for r in ll_k) + sum(max(r) for r in ll_s) + max(ll_e)
    pmf_k = [_geometric_pmf([rho_k[j]] * horizon) for j in range(n_s)]

    for ik in itertools.product(range(len(values)), repeat=n_s):
        gk = [values[k] for k in ik]
        prior_k = math.prod(pmf_k[j][ik[j]] for j in range(n_s))
        if prior_k == 0:
            continue
        pmf_s = [_geometric_pmf(hazard_row(rho_s[i], gk)) for i in range(n_t)]
        pmf_e = _geometric_pmf(hazard_row(rho_e, gk))
        base_ll = sum(ll_k[j][ik[j]] for j in range(n_s))
        for i_s in itertools.product(range(len(values)), repeat=n_t):
            p_s = prior_k * math.prod(pmf_s[i][i_s[i]] for i in range(n_t))
            if p_s == 0:
                continue
            ll_st = base_ll + sum(ll_s[i][i_s[i]] for i in range(n_t))
            for i_e, ge in enumerate(values):
                p = p_s * pmf_e[i_e]
                if p == 0:
                    continue
                mass = p * math.exp(ll_st + ll_e[i_e] - shift)
                total_mass += mass
                point = (*(values[k] for k in i_s), *gk, ge)
                for x, g in enumerate(point):
                    if g <= horizon:
                        curves[x, int(g) - 1:] += mass
    return curves / total_mass
