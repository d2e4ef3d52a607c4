"""Hot numeric kernels: bicycle rollouts, the tracking-cost solver, feature
builders and a packed MLP forward pass.

Everything here is written as scalar loops over float64 arrays so that the
exact same source runs compiled (numba) or interpreted (fallback), giving
bit-identical results on both paths. Wrappers in the public modules own
validation and the friendlier argument types.
"""

import math

import numpy as np

from .accel import njit


@njit
def wrap_angle(a):
    """Wrap an angle to (-pi, pi]."""
    r = (a + math.pi) % (2.0 * math.pi) - math.pi
    if r == -math.pi:
        r = math.pi
    return r


@njit
def bicycle_step(x, y, theta, delta, v, lf, dt):
    """One explicit-Euler step of the constant-speed bicycle model."""
    xn = x + v * math.cos(theta) * dt
    yn = y + v * math.sin(theta) * dt
    tn = theta + (v / lf) * math.sin(delta) * dt
    return xn, yn, tn


@njit
def rollout_cost(x, y, theta, u, refs, v, lf, dt):
    """Sum of squared position errors over the horizon.

    refs[i] is the reference for the state reached after applying u[i],
    i.e. refs has one row per horizon step.
    """
    c = 0.0
    for i in range(u.shape[0]):
        xn = x + v * math.cos(theta) * dt
        yn = y + v * math.sin(theta) * dt
        theta = theta + (v / lf) * math.sin(u[i]) * dt
        x = xn
        y = yn
        dx = x - refs[i, 0]
        dy = y - refs[i, 1]
        c += dx * dx + dy * dy
    return c


@njit
def rollout_cost_grad(x0, y0, th0, u, refs, v, lf, dt, grad):
    """Cost plus its exact gradient w.r.t. every control, via a backward
    adjoint sweep through the Euler rollout. `grad` is written in place."""
    n = u.shape[0]
    xs = np.empty(n + 1)
    ys = np.empty(n + 1)
    ths = np.empty(n + 1)
    xs[0] = x0
    ys[0] = y0
    ths[0] = th0
    cost = 0.0
    for i in range(n):
        xs[i + 1] = xs[i] + v * math.cos(ths[i]) * dt
        ys[i + 1] = ys[i] + v * math.sin(ths[i]) * dt
        ths[i + 1] = ths[i] + (v / lf) * math.sin(u[i]) * dt
        dx = xs[i + 1] - refs[i, 0]
        dy = ys[i + 1] - refs[i, 1]
        cost += dx * dx + dy * dy
    # Adjoint recursion: lam_i = dJ/dstate_i, pulled back one step at a time.
    lx = 2.0 * (xs[n] - refs[n - 1, 0])
    ly = 2.0 * (ys[n] - refs[n - 1, 1])
    lth = 0.0
    # The last control only rotates the final heading, which the cost never
    # sees, so its gradient is identically zero.
    grad[n - 1] = (v / lf) * math.cos(u[n - 1]) * dt * lth
    for i in range(n - 1, 0, -1):
        lth = lth + (-v * math.sin(ths[i]) * dt) * lx + (v * math.cos(ths[i]) * dt) * ly
        lx = lx + 2.0 * (xs[i] - refs[i - 1, 0])
        ly = ly + 2.0 * (ys[i] - refs[i - 1, 1])
        grad[i - 1] = (v / lf) * math.cos(u[i - 1]) * dt * lth
    return cost


@njit
def _normal_equations(x0, y0, th0, u, refs, v, lf, dt, H, g):
    """Exact first- and second-order data of the tracking cost at u.

    Fills g with the gradient and H with the full Hessian (Gauss-Newton
    part plus the residual-curvature part) and returns the cost. Headings
    enter positions only through their cos/sin prefix sums, so every
    derivative has a closed form:

        d p_q / d u_a = v*dt * a_a * (-(S_q - S_{a+1}), C_q - C_{a+1})

    with a_a = (v/lf)*dt*cos(u_a), C/S the heading prefix sums, nonzero
    only for q >= a+2 (a control first moves the position two steps later;
    the last control never moves any position inside the horizon).
    """
    n = u.shape[0]
    cs = np.empty(n + 1)  # cs[k] = sum_{m<k} cos(theta_m)
    ss = np.empty(n + 1)
    cs[0] = 0.0
    ss[0] = 0.0
    rx = np.empty(n + 1)  # residuals of position q, 1-based
    ry = np.empty(n + 1)
    x = x0
    y = y0
    th = th0
    cost = 0.0
    for j in range(n):
        cth = math.cos(th)
        sth = math.sin(th)
        cs[j + 1] = cs[j] + cth
        ss[j + 1] = ss[j] + sth
        x += v * cth * dt
        y += v * sth * dt
        th += (v / lf) * math.sin(u[j]) * dt
        rx[j + 1] = x - refs[j, 0]
        ry[j + 1] = y - refs[j, 1]
        cost += rx[j + 1] * rx[j + 1] + ry[j + 1] * ry[j + 1]

    # Suffix sums over position index q (entry k = sum for q = k..n).
    s_rx = np.zeros(n + 2)
    s_ry = np.zeros(n + 2)
    s_rxc = np.zeros(n + 2)  # rx[q] * cs[q]
    s_rxs = np.zeros(n + 2)
    s_ryc = np.zeros(n + 2)
    s_rys = np.zeros(n + 2)
    s_c = np.zeros(n + 2)  # cs[q]
    s_s = np.zeros(n + 2)
    s_cc = np.zeros(n + 2)  # cs[q]^2
    s_sss = np.zeros(n + 2)
    for q in range(n, 0, -1):
        s_rx[q] = s_rx[q + 1] + rx[q]
        s_ry[q] = s_ry[q + 1] + ry[q]
        s_rxc[q] = s_rxc[q + 1] + rx[q] * cs[q]
        s_rxs[q] = s_rxs[q + 1] + rx[q] * ss[q]
        s_ryc[q] = s_ryc[q + 1] + ry[q] * cs[q]
        s_rys[q] = s_rys[q + 1] + ry[q] * ss[q]
        s_c[q] = s_c[q + 1] + cs[q]
        s_s[q] = s_s[q + 1] + ss[q]
        s_cc[q] = s_cc[q + 1] + cs[q] * cs[q]
        s_sss[q] = s_sss[q + 1] + ss[q] * ss[q]

    vdt = v * dt
    w = (v / lf) * dt
    for a in range(n):
        aa = w * math.cos(u[a])
        da = -w * math.sin(u[a])  # d a_a / d u_a
        k = a + 2
        if k > n:
            bra = 0.0
        else:
            bra = (-(s_rxs[k] - ss[a + 1] * s_rx[k])
                   + (s_ryc[k] - cs[a + 1] * s_ry[k]))
        g[a] = 2.0 * vdt * aa * bra
        for b in range(a, n):
            ab = w * math.cos(u[b])
            m = b  # = max(a, b)
            k = m + 2
            if k > n:
                H[a, b] = 0.0
                H[b, a] = 0.0
                continue
            cnt = float(n - k + 1)
            # Gauss-Newton part: sum over q >= k of
            #   (S_q - S_{a+1})(S_q - S_{b+1}) + (C_q - C_{a+1})(C_q - C_{b+1})
            gn = (s_sss[k] - (ss[a + 1] + ss[b + 1]) * s_s[k]
                  + ss[a + 1] * ss[b + 1] * cnt
                  + s_cc[k] - (cs[a + 1] + cs[b + 1]) * s_c[k]
                  + cs[a + 1] * cs[b + 1] * cnt)
            h = 2.0 * vdt * vdt * aa * ab * gn
            # Residual-curvature part: r . d2p/du_a du_b summed over q >= k.
            tcur = (-(s_rxc[k] - cs[m + 1] * s_rx[k])
                    - (s_rys[k] - ss[m + 1] * s_ry[k])) * aa * ab
            h += 2.0 * vdt * tcur
            if a == b:
                h += 2.0 * vdt * da * bra
            H[a, b] = h
            H[b, a] = h
    return cost


@njit
def _solve_pivoted(A, b, x):
    """Gaussian elimination with partial pivoting; returns False on a
    (numerically) singular system instead of raising."""
    n = A.shape[0]
    for col in range(n):
        piv = col
        pmax = abs(A[col, col])
        for r in range(col + 1, n):
            a = abs(A[r, col])
            if a > pmax:
                pmax = a
                piv = r
        if pmax < 1e-300:
            return False
        if piv != col:
            for c in range(n):
                tmp = A[col, c]
                A[col, c] = A[piv, c]
                A[piv, c] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        inv = 1.0 / A[col, col]
        for r in range(col + 1, n):
            f = A[r, col] * inv
            if f != 0.0:
                for c in range(col + 1, n):
                    A[r, c] -= f * A[col, c]
                b[r] -= f * b[col]
            A[r, col] = 0.0
    for r in range(n - 1, -1, -1):
        acc = b[r]
        for c in range(r + 1, n):
            acc -= A[r, c] * x[c]
        x[r] = acc / A[r, r]
    return True


@njit
def solve_tracking(x0, y0, th0, u0, refs, v, lf, dt, dmax, max_iters, grad_tol):
    """Minimize the horizon tracking cost over box-bounded steering.

    Projected Newton with Levenberg damping: each iteration freezes the
    bound-active controls (at a box face with the gradient pushing
    outward), solves the damped exact-Hessian system on the free subspace
    and clamps the result. The damping follows the Nielsen gain-ratio rule,
    so poor model agreement pushes the step toward plain projected gradient
    descent while good agreement recovers Newton convergence.

    Returns (u, cost, iterations, converged); converged means the
    projected-gradient norm reached grad_tol.
    """
    n = refs.shape[0]
    u = np.empty(n)
    for i in range(n):
        ui = u0[i]
        if ui > dmax:
            ui = dmax
        elif ui < -dmax:
            ui = -dmax
        u[i] = ui
    # A bad warm start must never beat starting from zero steering.
    cost = rollout_cost(x0, y0, th0, u, refs, v, lf, dt)
    uz = np.zeros(n)
    zcost = rollout_cost(x0, y0, th0, uz, refs, v, lf, dt)
    if zcost < cost:
        u = uz
        cost = zcost

    H = np.empty((n, n))
    g = np.empty(n)
    free = np.empty(n, np.int64)
    u_try = np.empty(n)
    d = np.empty(n)
    mu = -1.0
    nu = 2.0
    iters = 0
    converged = False
    for _it in range(max_iters):
        iters += 1
        cost = _normal_equations(x0, y0, th0, u, refs, v, lf, dt, H, g)
        pg = 0.0
        for i in range(n):
            t = u[i] - g[i]
            if t > dmax:
                t = dmax
            elif t < -dmax:
                t = -dmax
            dd = u[i] - t
            pg += dd * dd
        if math.sqrt(pg) <= grad_tol:
            converged = True
            break

        hmax = 0.0
        for i in range(n):
            a = abs(H[i, i])
            if a > hmax:
                hmax = a
        if hmax <= 0.0:
            break  # degenerate horizon: nothing the controls can change
        if mu < 0.0:
            mu = 1e-3 * hmax

        nf = 0
        for i in range(n):
            at_hi = u[i] >= dmax and g[i] < 0.0
            at_lo = u[i] <= -dmax and g[i] > 0.0
            if not (at_hi or at_lo):
                free[nf] = i
                nf += 1
        if nf == 0:
            break

        Hf = np.empty((nf, nf))
        gf = np.empty(nf)
        Af = np.empty((nf, nf))
        bf = np.empty(nf)
        sf = np.empty(nf)
        for a in range(nf):
            gf[a] = g[free[a]]
            for b in range(nf):
                Hf[a, b] = H[free[a], free[b]]

        accepted = False
        new_cost = 0.0
        for _damp in range(120):
            for a in range(nf):
                for b in range(nf):
                    Af[a, b] = Hf[a, b]
                Af[a, a] = Hf[a, a] + mu
                bf[a] = gf[a]
            ok = _solve_pivoted(Af, bf, sf)
            if not ok:
                mu *= nu
                nu *= 2.0
                continue
            for i in range(n):
                u_try[i] = u[i]
            for a in range(nf):
                i = free[a]
                t = u[i] - sf[a]
                if t > dmax:
                    t = dmax
                elif t < -dmax:
                    t = -dmax
                u_try[i] = t
            pred = 0.0
            for i in range(n):
                d[i] = u_try[i] - u[i]
                pred -= g[i] * d[i]
            for a in range(n):
                hd = 0.0
                for b in range(n):
                    hd += H[a, b] * d[b]
                pred -= 0.5 * d[a] * hd
            new_cost = rollout_cost(x0, y0, th0, u_try, refs, v, lf, dt)
            if pred > 0.0 and new_cost < cost:
                rho = (cost - new_cost) / pred
                fac = 1.0 - (2.0 * rho - 1.0) ** 3
                if fac < 1.0 / 3.0:
                    fac = 1.0 / 3.0
                mu *= fac
                nu = 2.0
                accepted = True
                break
            mu *= nu
            nu *= 2.0
            if mu > 1e18 * hmax:
                break
        if not accepted:
            break
        for i in range(n):
            u[i] = u_try[i]
        cost = new_cost
        if mu < 1e-12 * hmax:
            mu = 1e-12 * hmax
    return u, cost, iters, converged


@njit
def grid_search(x0, y0, th0, refs, grid, v, lf, dt):
    """Exhaustive steering search over grid^N; first minimum wins, so the
    grid's ordering is the tie-break (callers pass it sorted center-out)."""
    n = refs.shape[0]
    nlev = grid.shape[0]
    total = 1
    for _ in range(n):
        total *= nlev
    u = np.empty(n)
    best = np.empty(n)
    best_cost = np.inf
    for t in range(total):
        rem = t
        for j in range(n - 1, -1, -1):
            u[j] = grid[rem % nlev]
            rem //= nlev
        c = rollout_cost(x0, y0, th0, u, refs, v, lf, dt)
        if c < best_cost:
            best_cost = c
            for j in range(n):
                best[j] = u[j]
    return best, best_cost


@njit
def nearest_index(points, x, y, start, window, last):
    """Index of the closest waypoint among [start, min(start+window, last)]."""
    end = start + window
    if end > last:
        end = last
    best = start
    bd = (points[start, 0] - x) ** 2 + (points[start, 1] - y) ** 2
    for j in range(start + 1, end + 1):
        d = (points[j, 0] - x) ** 2 + (points[j, 1] - y) ** 2
        if d < bd:
            bd = d
            best = j
    return best


@njit
def features_i3(x, y, th, points, headings, k, out):
    c = math.cos(th)
    s = math.sin(th)
    dx = points[k, 0] - x
    dy = points[k, 1] - y
    out[0] = c * dx + s * dy
    out[1] = -s * dx + c * dy
    out[2] = wrap_angle(headings[k] - th)


@njit
def features_i21(x, y, th, points, headings, k, n, out):
    c = math.cos(th)
    s = math.sin(th)
    for j in range(n):
        dx = points[k + 1 + j, 0] - x
        dy = points[k + 1 + j, 1] - y
        out[j] = -s * dx + c * dy
    out[n] = wrap_angle(headings[k] - th)


@njit
def features_i40(x, y, th, points, k, n, out):
    c = math.cos(th)
    s = math.sin(th)
    for j in range(n):
        dx = points[k + 1 + j, 0] - x
        dy = points[k + 1 + j, 1] - y
        out[2 * j] = c * dx + s * dy
        out[2 * j + 1] = -s * dx + c * dy


@njit
def mlp_forward(params, dims, acts, out_scale, x):
    """Forward pass over flat-packed MLP parameters.

    params holds, per layer, the row-major (out x in) weight block followed
    by the bias block. acts: 0 relu, 1 tanh, 2 sigmoid, 3 scaled tanh.
    """
    a = x
    off = 0
    for layer in range(dims.shape[0] - 1):
        nin = dims[layer]
        nout = dims[layer + 1]
        z = np.empty(nout)
        for i in range(nout):
            acc = 0.0
            base = off + i * nin
            for j in range(nin):
                acc += params[base + j] * a[j]
            z[i] = acc
        off += nout * nin
        for i in range(nout):
            z[i] += params[off + i]
        off += nout
        kind = acts[layer]
        if kind == 0:
            for i in range(nout):
                if z[i] < 0.0:
                    z[i] = 0.0
        elif kind == 1:
            for i in range(nout):
                z[i] = math.tanh(z[i])
        elif kind == 2:
            for i in range(nout):
                z[i] = 1.0 / (1.0 + math.exp(-z[i]))
        else:
            for i in range(nout):
                z[i] = out_scale * math.tanh(z[i])
        a = z
    return a[0]
