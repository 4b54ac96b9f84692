"""Brute-force reference computations used to cross-check the LP routes."""

import itertools

import numpy as np


def polytope_vertices(G, h, tol=1e-9):
    """All vertices of ``{x : G x <= h}`` by solving every square subsystem."""
    G = np.atleast_2d(np.asarray(G, float))
    h = np.asarray(h, float)
    p = G.shape[1]
    verts = []
    for rows in itertools.combinations(range(G.shape[0]), p):
        sub = G[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, h[list(rows)])
        if np.all(G @ x <= h + tol * (1 + np.abs(h))):
            verts.append(x)
    return np.array(verts).reshape(-1, p)


def error_set_width(A, wbar, d):
    """Width of ``{e : |A e|_inf <= 2 wbar}`` along ``d`` from its vertices."""
    A = np.atleast_2d(np.asarray(A, float))
    G = np.vstack([A, -A])
    h = np.full(G.shape[0], 2.0 * wbar)
    V = polytope_vertices(G, h)
    vals = V @ np.asarray(d, float)
    return vals.max() - vals.min()


def hull_by_vertices(G, h, lower, upper):
    """Axis-aligned bounding box of ``{G x <= h} cap [lower, upper]``."""
    p = len(lower)
    eye = np.eye(p)
    G_all = np.vstack([G, eye, -eye])
    h_all = np.concatenate([h, upper, -np.asarray(lower, float)])
    V = polytope_vertices(G_all, h_all)
    return V.min(axis=0), V.max(axis=0)
