"""Compiled fixed-step integrators for the built-in scientific systems.

These are hand-unrolled RK4 loops over the augmented (state, sensitivity)
system, one per model, so that particle flows and MCMC chains that need
thousands of trajectory evaluations stay fast.  The generic pure-Python
integrator in :mod:`pcuq.dynamics` follows the same scheme and is the
reference these are tested against.  Inner loops are written with scalar
updates into preallocated buffers; allocation inside the step loop is
what made earlier versions slow.
"""
import numpy as np
from numba import njit

TWO_PI = 2.0 * np.pi


@njit(cache=True)
def lv_path(u0, base, scale, h, n_steps, out_idx, want_sens, sens_idx):
    """RK4 path for the predator-prey system, optionally with sensitivities.

    base = (alpha, beta, gamma, delta); scale multiplies base elementwise.
    Sensitivities are with respect to base[sens_idx].  Returns states at
    the requested step indices and, when asked, d(state)/d(rate) blocks.
    """
    q = sens_idx.shape[0]
    n_out = out_idx.shape[0]
    states = np.empty((n_out, 2))
    sens = np.empty((n_out, 2, q))

    a = base[0] * scale[0]
    b = base[1] * scale[1]
    g = base[2] * scale[2]
    d = base[3] * scale[3]

    u1 = u0[0]
    u2 = u0[1]
    S = np.zeros((2, q))
    ku = np.empty((4, 2))
    kS = np.empty((4, 2, q))

    out_pos = 0
    if n_out > 0 and out_idx[0] == 0:
        states[0, 0] = u1
        states[0, 1] = u2
        if want_sens:
            sens[0] = S
        out_pos = 1

    for step in range(n_steps):
        for stage in range(4):
            if stage == 0:
                ch = 0.0
                pv = 0
                v1 = u1
                v2 = u2
            else:
                ch = 0.5 * h if stage < 3 else h
                pv = stage - 1
                v1 = u1 + ch * ku[pv, 0]
                v2 = u2 + ch * ku[pv, 1]
            ku[stage, 0] = a * v1 - b * v1 * v2
            ku[stage, 1] = d * v1 * v2 - g * v2
            if want_sens:
                j00 = a - b * v2
                j01 = -b * v1
                j10 = d * v2
                j11 = d * v1 - g
                for k in range(q):
                    if stage == 0:
                        s0 = S[0, k]
                        s1 = S[1, k]
                    else:
                        s0 = S[0, k] + ch * kS[pv, 0, k]
                        s1 = S[1, k] + ch * kS[pv, 1, k]
                    f0 = 0.0
                    f1 = 0.0
                    r = sens_idx[k]
                    if r == 0:
                        f0 = v1 * scale[0]
                    elif r == 1:
                        f0 = -v1 * v2 * scale[1]
                    elif r == 2:
                        f1 = -v2 * scale[2]
                    else:
                        f1 = v1 * v2 * scale[3]
                    kS[stage, 0, k] = j00 * s0 + j01 * s1 + f0
                    kS[stage, 1, k] = j10 * s0 + j11 * s1 + f1

        w = h / 6.0
        u1 += w * (ku[0, 0] + 2.0 * ku[1, 0] + 2.0 * ku[2, 0] + ku[3, 0])
        u2 += w * (ku[0, 1] + 2.0 * ku[1, 1] + 2.0 * ku[2, 1] + ku[3, 1])
        if want_sens:
            for k in range(q):
                S[0, k] += w * (kS[0, 0, k] + 2.0 * kS[1, 0, k]
                                + 2.0 * kS[2, 0, k] + kS[3, 0, k])
                S[1, k] += w * (kS[0, 1, k] + 2.0 * kS[1, 1, k]
                                + 2.0 * kS[2, 1, k] + kS[3, 1, k])

        if not (np.isfinite(u1) and np.isfinite(u2)):
            return states[:out_pos], sens[:out_pos], (step + 1) * h

        if out_pos < n_out and out_idx[out_pos] == step + 1:
            states[out_pos, 0] = u1
            states[out_pos, 1] = u2
            if want_sens:
                sens[out_pos] = S
            out_pos += 1

    return states, sens, -1.0


@njit(cache=True)
def _erk_rhs(u, rho, du):
    du[0] = -rho[0] * u[0] * u[1] + rho[1] * u[2] + rho[4] * u[3]
    du[1] = -rho[0] * u[0] * u[1] + rho[1] * u[2] + rho[10] * u[10]
    du[2] = rho[0] * u[0] * u[1] - rho[1] * u[2] - rho[2] * u[2] * u[8] + rho[3] * u[3]
    du[3] = rho[2] * u[2] * u[8] - rho[3] * u[3] - rho[4] * u[3]
    du[4] = rho[4] * u[3] - rho[5] * u[4] * u[6] + rho[6] * u[7]
    du[5] = rho[4] * u[3] - rho[8] * u[5] * u[9] + rho[9] * u[10]
    du[6] = -rho[5] * u[4] * u[6] + rho[6] * u[7] + rho[7] * u[7]
    du[7] = rho[5] * u[4] * u[6] - rho[6] * u[7] - rho[7] * u[7]
    du[8] = -rho[2] * u[2] * u[8] + rho[3] * u[3] + rho[7] * u[7]
    du[9] = -rho[8] * u[5] * u[9] + rho[9] * u[10] + rho[10] * u[10]
    du[10] = rho[8] * u[5] * u[9] - rho[9] * u[10] - rho[10] * u[10]


@njit(cache=True)
def _erk_dir(u, s, rho, out):
    """Derivative of the cascade right-hand side at u in state direction s.

    Each product u_i u_j in the rhs turns into s_i u_j + u_i s_j; the
    sparse structure keeps this far cheaper than a dense Jacobian product.
    """
    p01 = s[0] * u[1] + u[0] * s[1]
    p28 = s[2] * u[8] + u[2] * s[8]
    p46 = s[4] * u[6] + u[4] * s[6]
    p59 = s[5] * u[9] + u[5] * s[9]
    out[0] = -rho[0] * p01 + rho[1] * s[2] + rho[4] * s[3]
    out[1] = -rho[0] * p01 + rho[1] * s[2] + rho[10] * s[10]
    out[2] = rho[0] * p01 - rho[1] * s[2] - rho[2] * p28 + rho[3] * s[3]
    out[3] = rho[2] * p28 - rho[3] * s[3] - rho[4] * s[3]
    out[4] = rho[4] * s[3] - rho[5] * p46 + rho[6] * s[7]
    out[5] = rho[4] * s[3] - rho[8] * p59 + rho[9] * s[10]
    out[6] = -rho[5] * p46 + rho[6] * s[7] + rho[7] * s[7]
    out[7] = rho[5] * p46 - rho[6] * s[7] - rho[7] * s[7]
    out[8] = -rho[2] * p28 + rho[3] * s[3] + rho[7] * s[7]
    out[9] = -rho[8] * p59 + rho[9] * s[10] + rho[10] * s[10]
    out[10] = rho[8] * p59 - rho[9] * s[10] - rho[10] * s[10]


@njit(cache=True)
def _erk_jac_u(u, rho, J):
    J[:, :] = 0.0
    J[0, 0] = -rho[0] * u[1]
    J[0, 1] = -rho[0] * u[0]
    J[0, 2] = rho[1]
    J[0, 3] = rho[4]
    J[1, 0] = -rho[0] * u[1]
    J[1, 1] = -rho[0] * u[0]
    J[1, 2] = rho[1]
    J[1, 10] = rho[10]
    J[2, 0] = rho[0] * u[1]
    J[2, 1] = rho[0] * u[0]
    J[2, 2] = -rho[1] - rho[2] * u[8]
    J[2, 3] = rho[3]
    J[2, 8] = -rho[2] * u[2]
    J[3, 2] = rho[2] * u[8]
    J[3, 3] = -rho[3] - rho[4]
    J[3, 8] = rho[2] * u[2]
    J[4, 3] = rho[4]
    J[4, 4] = -rho[5] * u[6]
    J[4, 6] = -rho[5] * u[4]
    J[4, 7] = rho[6]
    J[5, 3] = rho[4]
    J[5, 5] = -rho[8] * u[9]
    J[5, 9] = -rho[8] * u[5]
    J[5, 10] = rho[9]
    J[6, 4] = -rho[5] * u[6]
    J[6, 6] = -rho[5] * u[4]
    J[6, 7] = rho[6] + rho[7]
    J[7, 4] = rho[5] * u[6]
    J[7, 6] = rho[5] * u[4]
    J[7, 7] = -rho[6] - rho[7]
    J[8, 2] = -rho[2] * u[8]
    J[8, 3] = rho[3]
    J[8, 7] = rho[7]
    J[8, 8] = -rho[2] * u[2]
    J[9, 5] = -rho[8] * u[9]
    J[9, 9] = -rho[8] * u[5]
    J[9, 10] = rho[9] + rho[10]
    J[10, 5] = rho[8] * u[9]
    J[10, 9] = rho[8] * u[5]
    J[10, 10] = -rho[9] - rho[10]


@njit(cache=True)
def _erk_jac_rho_col(u, r, col):
    col[:] = 0.0
    if r == 0:
        col[0] = -u[0] * u[1]
        col[1] = -u[0] * u[1]
        col[2] = u[0] * u[1]
    elif r == 1:
        col[0] = u[2]
        col[1] = u[2]
        col[2] = -u[2]
    elif r == 2:
        col[2] = -u[2] * u[8]
        col[3] = u[2] * u[8]
        col[8] = -u[2] * u[8]
    elif r == 3:
        col[2] = u[3]
        col[3] = -u[3]
        col[8] = u[3]
    elif r == 4:
        col[0] = u[3]
        col[3] = -u[3]
        col[4] = u[3]
        col[5] = u[3]
    elif r == 5:
        col[4] = -u[4] * u[6]
        col[6] = -u[4] * u[6]
        col[7] = u[4] * u[6]
    elif r == 6:
        col[4] = u[7]
        col[6] = u[7]
        col[7] = -u[7]
    elif r == 7:
        col[6] = u[7]
        col[7] = -u[7]
        col[8] = u[7]
    elif r == 8:
        col[5] = -u[5] * u[9]
        col[9] = -u[5] * u[9]
        col[10] = u[5] * u[9]
    elif r == 9:
        col[5] = u[10]
        col[9] = u[10]
        col[10] = -u[10]
    else:
        col[1] = u[10]
        col[9] = u[10]
        col[10] = -u[10]


@njit(cache=True)
def erk_path(u0, base, scale, h, n_steps, out_idx, want_sens, sens_idx, modulated):
    """RK4 path for the 11-species signalling cascade.

    With ``modulated`` the instantaneous rates are
    (1 + sin(2*pi*x/45)/2) * scale * base; sensitivities are with respect
    to base[sens_idx] and include the modulation factor via the chain rule.
    Sensitivity buffers are kept transposed, (direction, species), so each
    direction is a contiguous row.
    """
    dim = 11
    q = sens_idx.shape[0]
    n_out = out_idx.shape[0]
    states = np.empty((n_out, dim))
    sens = np.empty((n_out, dim, q))

    u = u0.copy()
    S = np.zeros((q, dim))

    rho = np.empty(dim)
    du = np.empty(dim)
    col = np.empty(dim)
    st = np.empty(dim)
    ds = np.empty(dim)
    ku = np.empty((4, dim))
    kS = np.empty((4, q, dim))
    ut = np.empty(dim)

    out_pos = 0
    if n_out > 0 and out_idx[0] == 0:
        states[0] = u
        if want_sens:
            for k in range(q):
                for i in range(dim):
                    sens[0, i, k] = S[k, i]
        out_pos = 1

    for step in range(n_steps):
        x0 = step * h
        for stage in range(4):
            if stage == 0:
                xs = x0
                ch = 0.0
                pv = 0
                for i in range(dim):
                    ut[i] = u[i]
            else:
                ch = 0.5 * h if stage < 3 else h
                xs = x0 + ch
                pv = stage - 1
                for i in range(dim):
                    ut[i] = u[i] + ch * ku[pv, i]

            m = 1.0 + 0.5 * np.sin(TWO_PI * xs / 45.0) if modulated else 1.0
            for r in range(dim):
                rho[r] = m * scale[r] * base[r]

            _erk_rhs(ut, rho, du)
            ku[stage] = du
            if want_sens:
                for k in range(q):
                    if stage == 0:
                        for i in range(dim):
                            st[i] = S[k, i]
                    else:
                        for i in range(dim):
                            st[i] = S[k, i] + ch * kS[pv, k, i]
                    _erk_dir(ut, st, rho, ds)
                    r = sens_idx[k]
                    _erk_jac_rho_col(ut, r, col)
                    c = m * scale[r]
                    for i in range(dim):
                        kS[stage, k, i] = ds[i] + c * col[i]

        w = h / 6.0
        for i in range(dim):
            u[i] += w * (ku[0, i] + 2.0 * ku[1, i] + 2.0 * ku[2, i] + ku[3, i])
        if want_sens:
            for k in range(q):
                for i in range(dim):
                    S[k, i] += w * (kS[0, k, i] + 2.0 * kS[1, k, i]
                                    + 2.0 * kS[2, k, i] + kS[3, k, i])

        ok = True
        for i in range(dim):
            if not np.isfinite(u[i]):
                ok = False
        if not ok:
            return states[:out_pos], sens[:out_pos], (step + 1) * h

        if out_pos < n_out and out_idx[out_pos] == step + 1:
            states[out_pos] = u
            if want_sens:
                for k in range(q):
                    for i in range(dim):
                        sens[out_pos, i, k] = S[k, i]
            out_pos += 1

    return states, sens, -1.0
