"""Numba kernels for the contact solver and the renderer.

Everything here is deterministic: serial loops, fixed accumulation order,
no fastmath.  Shapes are encoded for the kernels as
(code, params[4], pose[5]) where pose = (cos_theta, sin_theta, tx, ty, tz)
maps stimulus-canonical coordinates into the sensor frame.

Shape codes: 0 flat plate, 1 sphere, 2 square-edge block, 3 grating board.
Canonical solids occupy z >= surface with their lowest point at z = 0, so a
stimulus descends onto the dome apex along -z.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

PLATE, SPHERE, BOX_EDGE, GRATING = 0, 1, 2, 3


@njit(cache=True, nogil=True, inline="always")
def _sdf_canonical(code, p0, p1, p2, qx, qy, qz):
    if code == 1:  # sphere of radius p0, centre (0, 0, p0)
        dz = qz - p0
        d = math.sqrt(qx * qx + qy * qy + dz * dz)
        return d - p0
    if code == 2:  # box [-a, 0] x [-a/2, a/2] x [0, a], a = p0
        h = 0.5 * p0
        dx = abs(qx + h) - h
        dy = abs(qy) - h
        dz = abs(qz - h) - h
        ox = dx if dx > 0.0 else 0.0
        oy = dy if dy > 0.0 else 0.0
        oz = dz if dz > 0.0 else 0.0
        outside = math.sqrt(ox * ox + oy * oy + oz * oz)
        m = dx
        if dy > m:
            m = dy
        if dz > m:
            m = dz
        inside = m if m < 0.0 else 0.0
        return outside + inside
    if code == 3 and p0 > 0.0:  # grating: spacing p0, ridge p1, depth p2
        period = p0 + p1
        xm = qx - period * round(qx / period)
        ax = abs(xm) - 0.5 * p1
        ox = ax if ax > 0.0 else 0.0
        oz = -qz if -qz > 0.0 else 0.0
        outside = math.sqrt(ox * ox + oz * oz)
        m = ax if ax > -qz else -qz
        inside = m if m < 0.0 else 0.0
        ridge = outside + inside
        board = p2 - qz
        return ridge if ridge < board else board
    # flat plate (and spacing-0 grating): solid z >= 0
    return -qz


@njit(cache=True, nogil=True, inline="always")
def _sdf_grad_canonical(code, p0, p1, p2, qx, qy, qz):
    """Unit (a.e.) gradient of the canonical SDF; deterministic at kinks."""
    if code == 1:
        dz = qz - p0
        d = math.sqrt(qx * qx + qy * qy + dz * dz)
        if d < 1e-12:
            return 0.0, 0.0, -1.0
        return qx / d, qy / d, dz / d
    if code == 2:
        h = 0.5 * p0
        cx, cy, cz = qx + h, qy, qz - h
        dx = abs(cx) - h
        dy = abs(cy) - h
        dz = abs(cz) - h
        ox = dx if dx > 0.0 else 0.0
        oy = dy if dy > 0.0 else 0.0
        oz = dz if dz > 0.0 else 0.0
        outside = math.sqrt(ox * ox + oy * oy + oz * oz)
        if outside > 1e-12:
            sx = 1.0 if cx >= 0.0 else -1.0
            sy = 1.0 if cy >= 0.0 else -1.0
            sz = 1.0 if cz >= 0.0 else -1.0
            return sx * ox / outside, sy * oy / outside, sz * oz / outside
        if dx >= dy and dx >= dz:
            return (1.0 if cx >= 0.0 else -1.0), 0.0, 0.0
        if dy >= dz:
            return 0.0, (1.0 if cy >= 0.0 else -1.0), 0.0
        return 0.0, 0.0, (1.0 if cz >= 0.0 else -1.0)
    if code == 3 and p0 > 0.0:
        period = p0 + p1
        xm = qx - period * round(qx / period)
        ax = abs(xm) - 0.5 * p1
        ox = ax if ax > 0.0 else 0.0
        oz = -qz if -qz > 0.0 else 0.0
        outside = math.sqrt(ox * ox + oz * oz)
        m = ax if ax > -qz else -qz
        inside = m if m < 0.0 else 0.0
        ridge = outside + inside
        board = p2 - qz
        if board <= ridge:
            return 0.0, 0.0, -1.0
        sx = 1.0 if xm >= 0.0 else -1.0
        if outside > 1e-12:
            return sx * ox / outside, 0.0, -oz / outside
        if ax > -qz:
            return sx, 0.0, 0.0
        return 0.0, 0.0, -1.0
    return 0.0, 0.0, -1.0


@njit(cache=True, nogil=True, inline="always")
def _to_canonical(pose, px, py, pz):
    c, s = pose[0], pose[1]
    rx, ry = px - pose[2], py - pose[3]
    return c * rx + s * ry, -s * rx + c * ry, pz - pose[4]


@njit(cache=True, nogil=True)
def sdf_points(code, params, pose, pts, out):
    for i in range(pts.shape[0]):
        qx, qy, qz = _to_canonical(pose, pts[i, 0], pts[i, 1], pts[i, 2])
        out[i] = _sdf_canonical(code, params[0], params[1], params[2], qx, qy, qz)


@njit(cache=True, nogil=True)
def sdf_min(code, params, pose, pts):
    best = 1e300
    for i in range(pts.shape[0]):
        qx, qy, qz = _to_canonical(pose, pts[i, 0], pts[i, 1], pts[i, 2])
        d = _sdf_canonical(code, params[0], params[1], params[2], qx, qy, qz)
        if d < best:
            best = d
    return best


@njit(cache=True, nogil=True)
def sdf_inside_count(code, params, pose, pts):
    n = 0
    for i in range(pts.shape[0]):
        qx, qy, qz = _to_canonical(pose, pts[i, 0], pts[i, 1], pts[i, 2])
        if _sdf_canonical(code, params[0], params[1], params[2], qx, qy, qz) < 0.0:
            n += 1
    return n


@njit(cache=True, nogil=True)
def elastic_energy_grad(u, edges, dhat, ke, kb, g, want_grad):
    """Linearized edge springs plus uniform graph-Laplacian regularizer.

    Both terms are quadratic in the displacements, so the energy Hessian is
    constant and central finite differences reproduce the gradient exactly.
    """
    energy = 0.0
    for e in range(edges.shape[0]):
        i, j = edges[e, 0], edges[e, 1]
        dux = u[i, 0] - u[j, 0]
        duy = u[i, 1] - u[j, 1]
        duz = u[i, 2] - u[j, 2]
        proj = dux * dhat[e, 0] + duy * dhat[e, 1] + duz * dhat[e, 2]
        k = ke[e]
        energy += 0.5 * k * proj * proj + 0.5 * kb * (
            dux * dux + duy * duy + duz * duz
        )
        if want_grad:
            fx = k * proj * dhat[e, 0] + kb * dux
            fy = k * proj * dhat[e, 1] + kb * duy
            fz = k * proj * dhat[e, 2] + kb * duz
            g[i, 0] += fx
            g[i, 1] += fy
            g[i, 2] += fz
            g[j, 0] -= fx
            g[j, 1] -= fy
            g[j, 2] -= fz
    return energy


@njit(cache=True, nogil=True)
def penalty_energy_grad(rest, u, code, params, pose, kn_area, g, phi, want_grad):
    """Quadratic penetration penalty 0.5 * kn * A_v * phi^2 per vertex."""
    energy = 0.0
    for v in range(rest.shape[0]):
        px = rest[v, 0] + u[v, 0]
        py = rest[v, 1] + u[v, 1]
        pz = rest[v, 2] + u[v, 2]
        qx, qy, qz = _to_canonical(pose, px, py, pz)
        d = _sdf_canonical(code, params[0], params[1], params[2], qx, qy, qz)
        if d < 0.0:
            pen = -d
            phi[v] = pen
            ka = kn_area[v]
            energy += 0.5 * ka * pen * pen
            if want_grad:
                gx, gy, gz = _sdf_grad_canonical(
                    code, params[0], params[1], params[2], qx, qy, qz
                )
                c, s = pose[0], pose[1]
                wx = c * gx - s * gy
                wy = s * gx + c * gy
                # dE/du = -kn*A*phi*grad_sdf
                g[v, 0] -= ka * pen * wx
                g[v, 1] -= ka * pen * wy
                g[v, 2] -= ka * pen * gz
        else:
            phi[v] = 0.0
    return energy


@njit(cache=True, nogil=True)
def friction_energy_grad(
    rest, u, idx, normals, anchors, shear_x, shear_y, kt_area, caps, g, want_grad
):
    """Capped tangential springs (Huber form) between skin and stimulus.

    Each stage-one contact vertex is dragged toward its press-time anchor
    advected by the stimulus shear; spring force is capped per vertex by the
    Coulomb bound passed in ``caps``.
    """
    energy = 0.0
    for c in range(idx.shape[0]):
        v = idx[c]
        wx = rest[v, 0] + u[v, 0] - anchors[c, 0] - shear_x
        wy = rest[v, 1] + u[v, 1] - anchors[c, 1] - shear_y
        wz = rest[v, 2] + u[v, 2] - anchors[c, 2]
        nx, ny, nz = normals[c, 0], normals[c, 1], normals[c, 2]
        wn = wx * nx + wy * ny + wz * nz
        mx, my, mz = wx - wn * nx, wy - wn * ny, wz - wn * nz
        mlen = math.sqrt(mx * mx + my * my + mz * mz)
        kt = kt_area[c]
        cap = caps[c]
        if cap <= 0.0:  # zero normal force or zero mu: free slip
            continue
        if kt * mlen <= cap:
            energy += 0.5 * kt * mlen * mlen
            sx, sy, sz = kt * mx, kt * my, kt * mz
        else:
            energy += cap * mlen - 0.5 * cap * cap / kt
            sx = cap * mx / mlen
            sy = cap * my / mlen
            sz = cap * mz / mlen
        if want_grad:
            g[v, 0] += sx
            g[v, 1] += sy
            g[v, 2] += sz
    return energy


@njit(cache=True, nogil=True)
def total_energy_grad(
    rest, u, edges, dhat, ke, kb, code, sparams, pose, kn_area,
    fr_idx, fr_n, fr_anchor, fr_sx, fr_sy, fr_kt, fr_caps,
    g, phi, want_grad,
):
    if want_grad:
        g[:] = 0.0
    e = elastic_energy_grad(u, edges, dhat, ke, kb, g, want_grad)
    e += penalty_energy_grad(rest, u, code, sparams, pose, kn_area, g, phi, want_grad)
    if fr_idx.shape[0] > 0:
        e += friction_energy_grad(
            rest, u, fr_idx, fr_n, fr_anchor, fr_sx, fr_sy, fr_kt, fr_caps,
            g, want_grad,
        )
    return e


@njit(cache=True, nogil=True)
def descend_loop(
    u, vel, phi, rest, edges, dhat, ke, kb, code, sparams, pose, kn_area,
    fr_idx, fr_n, fr_anchor, fr_sx, fr_sy, fr_kt, fr_caps,
    boundary, precond, tol, max_iters, step0, momentum, trace, record,
):
    """Monotone damped heavy-ball descent; returns (iters, residual, done, n_trace).

    Mutates u, vel, phi in place.  Boundary vertices are projected to zero
    displacement each step.  Accepted-iteration energies land in ``trace``
    when ``record`` is set.
    """
    nv = u.shape[0]
    g = np.zeros((nv, 3))
    g_try = np.zeros((nv, 3))
    phi_try = np.zeros(nv)
    u_try = np.zeros((nv, 3))
    v_try = np.zeros((nv, 3))
    alpha = step0
    n_trace = 0
    e_cur = total_energy_grad(
        rest, u, edges, dhat, ke, kb, code, sparams, pose, kn_area,
        fr_idx, fr_n, fr_anchor, fr_sx, fr_sy, fr_kt, fr_caps, g, phi, True,
    )
    if record:
        trace[n_trace] = e_cur
        n_trace += 1
    iters = 0
    while iters < max_iters:
        for v in range(nv):
            if boundary[v]:
                g[v, 0] = 0.0
                g[v, 1] = 0.0
                g[v, 2] = 0.0
        residual = max_row_norm(g, boundary)
        if residual < tol:
            return iters, residual, 1, n_trace
        accepted = False
        for _ in range(40):
            for v in range(nv):
                for c in range(3):
                    v_try[v, c] = momentum * vel[v, c] - alpha * g[v, c] * precond[v]
                    u_try[v, c] = u[v, c] + v_try[v, c]
            e_try = total_energy_grad(
                rest, u_try, edges, dhat, ke, kb, code, sparams, pose, kn_area,
                fr_idx, fr_n, fr_anchor, fr_sx, fr_sy, fr_kt, fr_caps,
                g_try, phi_try, True,
            )
            if e_try <= e_cur * (1 + 1e-14) + 1e-18:
                accepted = True
                break
            alpha *= 0.5
            vel[:] = 0.0
        if not accepted:
            break
        u[:] = u_try
        vel[:] = v_try
        phi[:] = phi_try
        g[:] = g_try
        e_cur = e_try
        if alpha < 4.0 * step0:
            alpha *= 1.02
        iters += 1
        if record:
            trace[n_trace] = e_cur
            n_trace += 1
    for v in range(nv):
        if boundary[v]:
            g[v, 0] = 0.0
            g[v, 1] = 0.0
            g[v, 2] = 0.0
    residual = max_row_norm(g, boundary)
    return iters, residual, 1 if residual < tol else 0, n_trace


@njit(cache=True, nogil=True)
def max_row_norm(g, skip):
    best = 0.0
    for v in range(g.shape[0]):
        if skip[v]:
            continue
        r = math.sqrt(g[v, 0] ** 2 + g[v, 1] ** 2 + g[v, 2] ** 2)
        if r > best:
            best = r
    return best


@njit(cache=True, nogil=True)
def rasterize(uv, rho, pos, nrm, tris, out_pos, out_nrm, out_rho, out_mask):
    """Z-buffered scanline raster of the projected skin mesh.

    Triangles span only a few pixels, so the curved fisheye projection is
    linearized per triangle.
    """
    height, width = out_rho.shape
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, y0 = uv[i0, 0], uv[i0, 1]
        x1, y1 = uv[i1, 0], uv[i1, 1]
        x2, y2 = uv[i2, 0], uv[i2, 1]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-12:
            continue
        xmin = int(math.floor(min(x0, min(x1, x2))))
        xmax = int(math.ceil(max(x0, max(x1, x2))))
        ymin = int(math.floor(min(y0, min(y1, y2))))
        ymax = int(math.ceil(max(y0, max(y1, y2))))
        if xmin < 0:
            xmin = 0
        if ymin < 0:
            ymin = 0
        if xmax > width:
            xmax = width
        if ymax > height:
            ymax = height
        inv = 1.0 / area
        for py in range(ymin, ymax):
            cy = py + 0.5
            for px in range(xmin, xmax):
                cx = px + 0.5
                w0 = ((x1 - cx) * (y2 - cy) - (x2 - cx) * (y1 - cy)) * inv
                w1 = ((x2 - cx) * (y0 - cy) - (x0 - cx) * (y2 - cy)) * inv
                w2 = 1.0 - w0 - w1
                if w0 < -1e-9 or w1 < -1e-9 or w2 < -1e-9:
                    continue
                r = w0 * rho[i0] + w1 * rho[i1] + w2 * rho[i2]
                if r >= out_rho[py, px]:
                    continue
                out_rho[py, px] = r
                out_mask[py, px] = 1
                for c in range(3):
                    out_pos[py, px, c] = (
                        w0 * pos[i0, c] + w1 * pos[i1, c] + w2 * pos[i2, c]
                    )
                    out_nrm[py, px, c] = (
                        w0 * nrm[i0, c] + w1 * nrm[i1, c] + w2 * nrm[i2, c]
                    )


@njit(cache=True, nogil=True)
def march_rays(starts, dirs, code, params, pose, t_max, out_t):
    """Sphere-trace the stimulus SDF from the skin exit points."""
    for i in range(starts.shape[0]):
        t = 1e-3
        tm = t_max[i]
        out_t[i] = np.inf
        for _ in range(64):
            if t > tm:
                break
            px = starts[i, 0] + t * dirs[i, 0]
            py = starts[i, 1] + t * dirs[i, 1]
            pz = starts[i, 2] + t * dirs[i, 2]
            qx, qy, qz = _to_canonical(pose, px, py, pz)
            d = _sdf_canonical(code, params[0], params[1], params[2], qx, qy, qz)
            if d < 1e-4:
                out_t[i] = t
                break
            t += d if d > 0.02 else 0.02
