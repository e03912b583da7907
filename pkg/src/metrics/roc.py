from typing import Sequence

import numpy as np
from scipy.stats import rankdata


def roc_auc(scores_in: Sequence[float], scores_out: Sequence[float]) -> float:
    """
    Probability that an out-of-domain score exceeds an in-domain one, ties counted as one half.

    Mann-Whitney U of the out-of-domain group from midranks, divided by the pair count.
    """
    scores_in = np.asarray(scores_in, dtype=np.float64).reshape(-1)
    scores_out = np.asarray(scores_out, dtype=np.float64).reshape(-1)
    if scores_in.size == 0 or scores_out.size == 0:
        raise ValueError(f"roc_auc needs non-empty score lists, got {scores_in.size} in-domain and {scores_out.size} out-of-domain")
    n_in, n_out = scores_in.size, scores_out.size
    pairs = n_in * n_out
    ranks = rankdata(np.concatenate([scores_in, scores_out]), method='average')
    # midranks are half-integers, so both U statistics are exact in float64
    u_out = float(np.sum(ranks[n_in:])) - n_out * (n_out + 1) / 2.0
    u_in = pairs - u_out
    # only the larger U is divided; 1 - q is exact for q >= 0.5, keeping the swapped-group result a bitwise complement
    if u_out >= u_in:
        return u_out / pairs
    return 1.0 - u_in / pairs
