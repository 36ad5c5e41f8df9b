"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

STEP = 1e-5


def relative_error(analytic, numeric) -> float:
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


def check_params(loss_fn, params, grads, rng, per_array=25, step=STEP) -> float:
    """Worst relative error over a random subset of entries of every parameter array.

    ``loss_fn()`` must re-evaluate the scalar loss from the live ``params``.
    """
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_array, flat.size), replace=False)
        numeric = np.empty(len(picks))
        for k, i in enumerate(picks):
            old = flat[i]
            flat[i] = old + step
            up = loss_fn()
            flat[i] = old - step
            down = loss_fn()
            flat[i] = old
            numeric[k] = (up - down) / (2 * step)
        worst = max(worst, relative_error(g.reshape(-1)[picks], numeric))
    return worst
