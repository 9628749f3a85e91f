"""
Chebyshev filters on a small graph
==================================

A K-th order spectral filter never needs the eigenvectors of the graph.
It only needs K sparse products with the scaled Laplacian.  Here we check
that against the eigendecomposition on a ring.
"""

import numpy as np

from popgcn.graph_core import WeightedGraph, chebyshev_apply, graph_operator, normalized_laplacian

# a 12-node ring with unit weights
n = 12
ring = WeightedGraph.from_edges(n, [(i, (i + 1) % n, 1.0) for i in range(n)])

# the normalized Laplacian of a ring has eigenvalues 1 - cos(2 pi j / n)
lap = normalized_laplacian(ring).toarray()
print("spectrum  :", np.round(np.sort(np.linalg.eigvalsh(lap)), 4))
print("expected  :", np.round(np.sort(1 - np.cos(2 * np.pi * np.arange(n) / n)), 4))

# scale to [-1, 1] and push a delta through T_0..T_4
lt = graph_operator(ring)
delta = np.zeros((n, 1))
delta[0] = 1.0
terms = chebyshev_apply(lt, delta, 4)

# T_k of a delta never reaches past k hops
for k, t in enumerate(terms):
    support = np.flatnonzero(np.abs(t[:, 0]) > 1e-12)
    print(f"T_{k} reaches nodes {support.tolist()}")

# same thing through the spectrum
w, v = np.linalg.eigh(lt.matrix.toarray())
t3 = (v * np.cos(3 * np.arccos(np.clip(w, -1, 1)))) @ v.T @ delta
print("max |recurrence - spectral| for T_3:", np.abs(terms[3] - t3).max())
