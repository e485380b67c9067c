"""Minimum-cost bipartite assignment (Hungarian matching).

A shortest-augmenting-path solver (Jonker-Volgenant potentials) specialized
for the set-prediction case: more detections than ground truths, every
ground truth must be matched. Exact and deterministic; cost ties resolve
toward the lowest detection index (columns are scanned in ascending order
with strict improvement).
"""

from __future__ import annotations

import numpy as np
import torch


def hungarian_match(cost: "np.ndarray | torch.Tensor") -> dict[int, int]:
    """Assign all M columns (ground truths) to distinct rows (detections)
    of an N x M cost matrix, N >= M, minimizing total cost.

    Returns {detection index: ground-truth index}.
    """
    if isinstance(cost, torch.Tensor):
        cost = cost.detach().cpu().numpy()
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-D, got shape {cost.shape}")
    n_det, n_gt = cost.shape
    if n_gt == 0:
        return {}
    if n_det < n_gt:
        raise ValueError(
            f"need at least as many detections as ground truths ({n_det} < {n_gt})"
        )
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")

    # Solve with rows = ground truths so every one gets assigned.
    c = cost.T  # (n_gt, n_det)
    INF = np.inf
    u = np.zeros(n_gt + 1)
    v = np.zeros(n_det + 1)
    # match_det[j] = 1-based gt matched to detection j (0 = free)
    match_det = np.zeros(n_det + 1, dtype=np.int64)

    for i in range(1, n_gt + 1):
        match_det[0] = i
        j0 = 0
        minv = np.full(n_det + 1, INF)
        way = np.zeros(n_det + 1, dtype=np.int64)
        used = np.zeros(n_det + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match_det[j0]
            free = ~used[1:]
            reduced = c[i0 - 1] - u[i0] - v[1:]
            improve = free & (reduced < minv[1:])
            minv[1:][improve] = reduced[improve]
            way[1:][improve] = j0
            # np.argmin takes the first minimum: ties go to the lowest index
            masked = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[match_det[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match_det[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            match_det[j0] = match_det[j1]
            j0 = j1

    return {
        int(j - 1): int(match_det[j] - 1)
        for j in range(1, n_det + 1)
        if match_det[j] != 0
    }
