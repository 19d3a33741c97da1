"""numba kernels for the built-in models.

Every ``*_rollout`` kernel has the signature
``(params, act, q0, v0, U, horizon, bound, Q, V, div)`` and fills ``Q[j, :horizon+1]``
and ``V[j, :horizon+1]`` for each sample ``j``. On divergence the remaining
states are frozen at the last finite state and ``div[j]`` holds the step index.
"""

import math

from numba import njit


@njit(cache=True, inline="always")
def _actuate(act, i, u, q, v, torque_mode):
    target = act[3, i] * u
    if target < act[4, i]:
        target = act[4, i]
    elif target > act[5, i]:
        target = act[5, i]
    if torque_mode:
        tau = target
    else:
        tau = act[0, i] * (target - q) - act[1, i] * v
    lim = act[2, i]
    if tau > lim:
        return lim
    if tau < -lim:
        return -lim
    return tau


@njit(cache=True)
def _check_and_freeze(Q, V, div, j, t, horizon, bound):
    """Return True (and freeze the sample) if step t+1 left the bound."""
    bad = False
    for i in range(Q.shape[2]):
        x = Q[j, t + 1, i]
        if not (abs(x) <= bound):
            bad = True
    for i in range(V.shape[2]):
        x = V[j, t + 1, i]
        if not (abs(x) <= bound):
            bad = True
    if bad:
        div[j] = t + 1
        for s in range(t + 1, horizon + 1):
            for i in range(Q.shape[2]):
                Q[j, s, i] = Q[j, t, i]
            for i in range(V.shape[2]):
                V[j, s, i] = V[j, t, i]
    return bad


# -- double integrator ----------------------------------------------------
# params: mass, h, substeps, torque_mode

@njit(cache=True, nogil=True)
def double_integrator_rollout(p, act, q0, v0, U, horizon, bound, Q, V, div):
    mass = p[0]
    h = p[1]
    nsub = int(p[2])
    torque_mode = p[3] > 0.5
    n = q0.shape[0]
    for j in range(U.shape[0]):
        div[j] = -1
        for i in range(n):
            Q[j, 0, i] = q0[i]
            V[j, 0, i] = v0[i]
        for t in range(horizon):
            for i in range(n):
                q = Q[j, t, i]
                v = V[j, t, i]
                for _ in range(nsub):
                    f = _actuate(act, i, U[j, t, i], q, v, torque_mode)
                    v = v + h * f / mass
                    q = q + h * v
                Q[j, t + 1, i] = q
                V[j, t + 1, i] = v
            if _check_and_freeze(Q, V, div, j, t, horizon, bound):
                break


# -- pendulum ---------------------------------------------------------------
# angle 0 hangs down. params: mass, length, gravity, damping, h, substeps, torque_mode

@njit(cache=True, nogil=True)
def pendulum_rollout(p, act, q0, v0, U, horizon, bound, Q, V, div):
    m = p[0]
    l = p[1]
    g = p[2]
    b = p[3]
    h = p[4]
    nsub = int(p[5])
    torque_mode = p[6] > 0.5
    inertia = m * l * l
    for j in range(U.shape[0]):
        div[j] = -1
        Q[j, 0, 0] = q0[0]
        V[j, 0, 0] = v0[0]
        for t in range(horizon):
            th = Q[j, t, 0]
            om = V[j, t, 0]
            for _ in range(nsub):
                tau = _actuate(act, 0, U[j, t, 0], th, om, torque_mode)
                acc = (tau - b * om - m * g * l * math.sin(th)) / inertia
                om = om + h * acc
                th = th + h * om
            Q[j, t + 1, 0] = th
            V[j, t + 1, 0] = om
            if _check_and_freeze(Q, V, div, j, t, horizon, bound):
                break


# -- cart-pole --------------------------------------------------------------
# q = (x, theta), theta measured from upright. params: cart mass, pole mass,
# pole half-length, gravity, h, substeps, torque_mode

@njit(cache=True, nogil=True)
def cartpole_rollout(p, act, q0, v0, U, horizon, bound, Q, V, div):
    mc = p[0]
    mp = p[1]
    l = p[2]
    g = p[3]
    h = p[4]
    nsub = int(p[5])
    torque_mode = p[6] > 0.5
    total = mc + mp
    for j in range(U.shape[0]):
        div[j] = -1
        for i in range(2):
            Q[j, 0, i] = q0[i]
            V[j, 0, i] = v0[i]
        for t in range(horizon):
            x = Q[j, t, 0]
            th = Q[j, t, 1]
            xd = V[j, t, 0]
            thd = V[j, t, 1]
            for _ in range(nsub):
                f = _actuate(act, 0, U[j, t, 0], x, xd, torque_mode)
                s = math.sin(th)
                c = math.cos(th)
                temp = (f + mp * l * thd * thd * s) / total
                thacc = (g * s - c * temp) / (l * (4.0 / 3.0 - mp * c * c / total))
                xacc = temp - mp * l * thacc * c / total
                xd = xd + h * xacc
                thd = thd + h * thacc
                x = x + h * xd
                th = th + h * thd
            Q[j, t + 1, 0] = x
            Q[j, t + 1, 1] = th
            V[j, t + 1, 0] = xd
            V[j, t + 1, 1] = thd
            if _check_and_freeze(Q, V, div, j, t, horizon, bound):
                break


# -- planar pusher ------------------------------------------------------------
# params index map (kept in sync with PlanarPusher._kernel_params)
P_H, P_NSUB, P_MF, P_RF, P_IF, P_MO, P_HALF, P_DISK, P_MUC, P_MUG, P_G, \
    P_K, P_C, P_VS, P_YAW, P_IO, P_RT = range(17)


@njit(cache=True, inline="always")
def contact_geometry(fx, fy, ox, oy, th, half, rf, disk):
    """Penetration depth, world normal (object -> finger) and object surface point."""
    c = math.cos(th)
    s = math.sin(th)
    dxw = fx - ox
    dyw = fy - oy
    px = c * dxw + s * dyw
    py = -s * dxw + c * dyw
    if disk:
        dist = math.sqrt(px * px + py * py)
        if dist > 0.0:
            nlx = px / dist
            nly = py / dist
        else:
            nlx = 1.0
            nly = 0.0
        sdf = dist - half
        clx = half * nlx
        cly = half * nly
    else:
        ax = abs(px) - half
        ay = abs(py) - half
        if ax > 0.0 or ay > 0.0:
            clx = min(max(px, -half), half)
            cly = min(max(py, -half), half)
            ddx = px - clx
            ddy = py - cly
            dist = math.sqrt(ddx * ddx + ddy * ddy)
            nlx = ddx / dist
            nly = ddy / dist
            sdf = dist
        elif ax > ay:
            nlx = 1.0 if px >= 0.0 else -1.0
            nly = 0.0
            clx = nlx * half
            cly = py
            sdf = ax
        else:
            nlx = 0.0
            nly = 1.0 if py >= 0.0 else -1.0
            clx = px
            cly = nly * half
            sdf = ay
    pen = rf - sdf
    nx = c * nlx - s * nly
    ny = s * nlx + c * nly
    cx = ox + c * clx - s * cly
    cy = oy + s * clx + c * cly
    return pen, nx, ny, cx, cy


@njit(cache=True)
def pusher_penetration(p, Qflat, out):
    yaw = p[P_YAW] > 0.5
    io = 3 if yaw else 2
    disk = p[P_DISK] > 0.5
    for r in range(Qflat.shape[0]):
        pen, _, _, _, _ = contact_geometry(
            Qflat[r, 0], Qflat[r, 1], Qflat[r, io], Qflat[r, io + 1], Qflat[r, io + 2],
            p[P_HALF], p[P_RF], disk,
        )
        out[r] = pen


@njit(cache=True, nogil=True)
def pusher_rollout(p, act, q0, v0, U, horizon, bound, Q, V, div):
    h = p[P_H]
    nsub = int(p[P_NSUB])
    mf = p[P_MF]
    rf = p[P_RF]
    i_f = p[P_IF]
    mo = p[P_MO]
    half = p[P_HALF]
    disk = p[P_DISK] > 0.5
    muc = p[P_MUC]
    mug = p[P_MUG]
    g = p[P_G]
    k = p[P_K]
    cdamp = p[P_C]
    vs = p[P_VS]
    yaw = p[P_YAW] > 0.5
    io_ = p[P_IO]
    rt = p[P_RT]
    o = 3 if yaw else 2
    nq = q0.shape[0]
    for j in range(U.shape[0]):
        div[j] = -1
        for i in range(nq):
            Q[j, 0, i] = q0[i]
            V[j, 0, i] = v0[i]
        for t in range(horizon):
            fx = Q[j, t, 0]
            fy = Q[j, t, 1]
            ox = Q[j, t, o]
            oy = Q[j, t, o + 1]
            th = Q[j, t, o + 2]
            fvx = V[j, t, 0]
            fvy = V[j, t, 1]
            ovx = V[j, t, o]
            ovy = V[j, t, o + 1]
            om = V[j, t, o + 2]
            psi = 0.0
            psid = 0.0
            if yaw:
                psi = Q[j, t, 2]
                psid = V[j, t, 2]
            for _ in range(nsub):
                ax = _actuate(act, 0, U[j, t, 0], fx, fvx, False)
                ay = _actuate(act, 1, U[j, t, 1], fy, fvy, False)
                cfx = 0.0
                cfy = 0.0
                tau_o = 0.0
                pen, nx, ny, cx, cy = contact_geometry(fx, fy, ox, oy, th, half, rf, disk)
                if pen > 0.0:
                    rx = cx - ox
                    ry = cy - oy
                    rvx = fvx - (ovx - om * ry)
                    rvy = fvy - (ovy + om * rx)
                    vn = rvx * nx + rvy * ny
                    fn = k * pen - cdamp * vn
                    if fn < 0.0:
                        fn = 0.0
                    tx = -ny
                    ty = nx
                    vt = rvx * tx + rvy * ty
                    rxt = rx * ty - ry * tx
                    inv_m = 1.0 / mf + 1.0 / mo + rxt * rxt / io_
                    ft = muc * fn * math.tanh(abs(vt) / vs)
                    # never reverse the relative sliding velocity within a substep
                    cap = abs(vt) / (inv_m * h)
                    if ft > cap:
                        ft = cap
                    if vt > 0.0:
                        ft = -ft
                    cfx = fn * nx + ft * tx
                    cfy = fn * ny + ft * ty
                    tau_o = -(rx * cfy - ry * cfx)
                fvx = fvx + h * (ax + cfx) / mf
                fvy = fvy + h * (ay + cfy) / mf
                if yaw:
                    tau_y = _actuate(act, 2, U[j, t, 2], psi, psid, False)
                    psid = psid + h * tau_y / i_f
                    psi = psi + h * psid
                ovx = ovx - h * cfx / mo
                ovy = ovy - h * cfy / mo
                om = om + h * tau_o / io_
                speed = math.sqrt(ovx * ovx + ovy * ovy)
                if speed > 0.0 and mug > 0.0:
                    dv = mug * g * math.tanh(speed / vs) * h
                    if dv > speed:
                        dv = speed
                    ovx = ovx - dv * ovx / speed
                    ovy = ovy - dv * ovy / speed
                aw = abs(om)
                if aw > 0.0 and mug > 0.0:
                    dw = mug * mo * g * rt * math.tanh(aw * rt / vs) * h / io_
                    if dw > aw:
                        dw = aw
                    om = om - dw if om > 0.0 else om + dw
                fx = fx + h * fvx
                fy = fy + h * fvy
                ox = ox + h * ovx
                oy = oy + h * ovy
                th = th + h * om
            Q[j, t + 1, 0] = fx
            Q[j, t + 1, 1] = fy
            Q[j, t + 1, o] = ox
            Q[j, t + 1, o + 1] = oy
            Q[j, t + 1, o + 2] = th
            V[j, t + 1, 0] = fvx
            V[j, t + 1, 1] = fvy
            V[j, t + 1, o] = ovx
            V[j, t + 1, o + 1] = ovy
            V[j, t + 1, o + 2] = om
            if yaw:
                Q[j, t + 1, 2] = psi
                V[j, t + 1, 2] = psid
            if _check_and_freeze(Q, V, div, j, t, horizon, bound):
                break
