"""Independent reference implementations used as test oracles."""

import numpy as np


def naive_sim(model, x0, current):
    """Dense matrix iteration of the discrete state-space recursion."""
    x = np.asarray(x0, float).copy()
    i = np.asarray(current, float)
    y = np.empty(i.size)
    soc = np.empty(i.size)
    for k in range(i.size):
        u = np.array([i[k], 1.0])
        y[k] = model.c_d @ x + model.d_d @ u
        soc[k] = x[-1]
        x = model.a_d @ x + model.b_d @ u
    return y, soc, x


def central_jacobian(fun, x, rel_step=1e-6, abs_floor=None):
    """Central finite differences, the reference for the solver Jacobian.

    abs_floor keeps the steps above the round-off of residuals computed
    at terminal-voltage scale; without it, columns whose parameter value
    is tiny measure float noise instead of the derivative.
    """
    x = np.asarray(x, float)
    f0 = fun(x)
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = rel_step * abs(x[j])
        if abs_floor is not None:
            h = max(h, abs_floor[j])
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (fun(xp) - fun(xm)) / (2.0 * h)
    return jac
