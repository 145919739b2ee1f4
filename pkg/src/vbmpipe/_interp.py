"""Jitted trilinear interpolation kernels for displacement-field algebra.

All kernels run single-threaded in raster order, so results are exactly
reproducible. Out-of-grid lookups interpolate against zero padding: corners
outside the grid contribute nothing to the value or to its derivatives.
"""

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True)
def compose_kernel(a0, a1, a2, b0, b1, b2, o0, o1, o2):
    """Displacement composition: out(x) = a(x + b(x)) + b(x)."""
    nx, ny, nz = a0.shape
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                x = ix + b0[ix, iy, iz]
                y = iy + b1[ix, iy, iz]
                z = iz + b2[ix, iy, iz]
                x0 = int(np.floor(x)); y0 = int(np.floor(y)); z0 = int(np.floor(z))
                fx = x - x0; fy = y - y0; fz = z - z0
                gx = 1.0 - fx; gy = 1.0 - fy; gz = 1.0 - fz
                if 0 <= x0 and x0 + 1 < nx and 0 <= y0 and y0 + 1 < ny and 0 <= z0 and z0 + 1 < nz:
                    x1 = x0 + 1; y1 = y0 + 1; z1 = z0 + 1
                    w000 = gx * gy * gz; w001 = gx * gy * fz
                    w010 = gx * fy * gz; w011 = gx * fy * fz
                    w100 = fx * gy * gz; w101 = fx * gy * fz
                    w110 = fx * fy * gz; w111 = fx * fy * fz
                    o0[ix, iy, iz] = (w000 * a0[x0, y0, z0] + w001 * a0[x0, y0, z1]
                                      + w010 * a0[x0, y1, z0] + w011 * a0[x0, y1, z1]
                                      + w100 * a0[x1, y0, z0] + w101 * a0[x1, y0, z1]
                                      + w110 * a0[x1, y1, z0] + w111 * a0[x1, y1, z1]) + b0[ix, iy, iz]
                    o1[ix, iy, iz] = (w000 * a1[x0, y0, z0] + w001 * a1[x0, y0, z1]
                                      + w010 * a1[x0, y1, z0] + w011 * a1[x0, y1, z1]
                                      + w100 * a1[x1, y0, z0] + w101 * a1[x1, y0, z1]
                                      + w110 * a1[x1, y1, z0] + w111 * a1[x1, y1, z1]) + b1[ix, iy, iz]
                    o2[ix, iy, iz] = (w000 * a2[x0, y0, z0] + w001 * a2[x0, y0, z1]
                                      + w010 * a2[x0, y1, z0] + w011 * a2[x0, y1, z1]
                                      + w100 * a2[x1, y0, z0] + w101 * a2[x1, y0, z1]
                                      + w110 * a2[x1, y1, z0] + w111 * a2[x1, y1, z1]) + b2[ix, iy, iz]
                else:
                    acc0 = 0.0; acc1 = 0.0; acc2 = 0.0
                    for dx in range(2):
                        xi = x0 + dx
                        if xi < 0 or xi >= nx:
                            continue
                        wx = fx if dx == 1 else gx
                        for dy in range(2):
                            yi = y0 + dy
                            if yi < 0 or yi >= ny:
                                continue
                            wxy = wx * (fy if dy == 1 else gy)
                            for dz in range(2):
                                zi = z0 + dz
                                if zi < 0 or zi >= nz:
                                    continue
                                w = wxy * (fz if dz == 1 else gz)
                                acc0 += w * a0[xi, yi, zi]
                                acc1 += w * a1[xi, yi, zi]
                                acc2 += w * a2[xi, yi, zi]
                    o0[ix, iy, iz] = acc0 + b0[ix, iy, iz]
                    o1[ix, iy, iz] = acc1 + b1[ix, iy, iz]
                    o2[ix, iy, iz] = acc2 + b2[ix, iy, iz]


@numba.njit(cache=True, fastmath=True)
def compose_vjp_kernel(a0, a1, a2, b0, b1, b2, c0, c1, c2,
                       ca0, ca1, ca2, cb0, cb1, cb2):
    """Reverse-mode of compose_kernel.

    (c0,c1,c2) is the incoming cotangent of the output. Cotangents w.r.t.
    the sampled field are *accumulated* into (ca0..ca2), which the caller
    must zero; cotangents w.r.t. b are *assigned* to (cb0..cb2) and include
    the identity path through the trailing "+ b" term.
    """
    nx, ny, nz = a0.shape
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                x = ix + b0[ix, iy, iz]
                y = iy + b1[ix, iy, iz]
                z = iz + b2[ix, iy, iz]
                x0 = int(np.floor(x)); y0 = int(np.floor(y)); z0 = int(np.floor(z))
                fx = x - x0; fy = y - y0; fz = z - z0
                gx = 1.0 - fx; gy = 1.0 - fy; gz = 1.0 - fz
                g0 = c0[ix, iy, iz]; g1 = c1[ix, iy, iz]; g2 = c2[ix, iy, iz]
                dX = 0.0; dY = 0.0; dZ = 0.0
                if 0 <= x0 and x0 + 1 < nx and 0 <= y0 and y0 + 1 < ny and 0 <= z0 and z0 + 1 < nz:
                    x1 = x0 + 1; y1 = y0 + 1; z1 = z0 + 1
                    v000 = a0[x0, y0, z0] * g0 + a1[x0, y0, z0] * g1 + a2[x0, y0, z0] * g2
                    v001 = a0[x0, y0, z1] * g0 + a1[x0, y0, z1] * g1 + a2[x0, y0, z1] * g2
                    v010 = a0[x0, y1, z0] * g0 + a1[x0, y1, z0] * g1 + a2[x0, y1, z0] * g2
                    v011 = a0[x0, y1, z1] * g0 + a1[x0, y1, z1] * g1 + a2[x0, y1, z1] * g2
                    v100 = a0[x1, y0, z0] * g0 + a1[x1, y0, z0] * g1 + a2[x1, y0, z0] * g2
                    v101 = a0[x1, y0, z1] * g0 + a1[x1, y0, z1] * g1 + a2[x1, y0, z1] * g2
                    v110 = a0[x1, y1, z0] * g0 + a1[x1, y1, z0] * g1 + a2[x1, y1, z0] * g2
                    v111 = a0[x1, y1, z1] * g0 + a1[x1, y1, z1] * g1 + a2[x1, y1, z1] * g2
                    dX = (-gy * gz * v000 - gy * fz * v001 - fy * gz * v010 - fy * fz * v011
                          + gy * gz * v100 + gy * fz * v101 + fy * gz * v110 + fy * fz * v111)
                    dY = (-gx * gz * v000 - gx * fz * v001 + gx * gz * v010 + gx * fz * v011
                          - fx * gz * v100 - fx * fz * v101 + fx * gz * v110 + fx * fz * v111)
                    dZ = (-gx * gy * v000 + gx * gy * v001 - gx * fy * v010 + gx * fy * v011
                          - fx * gy * v100 + fx * gy * v101 - fx * fy * v110 + fx * fy * v111)
                    w000 = gx * gy * gz; w001 = gx * gy * fz
                    w010 = gx * fy * gz; w011 = gx * fy * fz
                    w100 = fx * gy * gz; w101 = fx * gy * fz
                    w110 = fx * fy * gz; w111 = fx * fy * fz
                    ca0[x0, y0, z0] += w000 * g0; ca1[x0, y0, z0] += w000 * g1; ca2[x0, y0, z0] += w000 * g2
                    ca0[x0, y0, z1] += w001 * g0; ca1[x0, y0, z1] += w001 * g1; ca2[x0, y0, z1] += w001 * g2
                    ca0[x0, y1, z0] += w010 * g0; ca1[x0, y1, z0] += w010 * g1; ca2[x0, y1, z0] += w010 * g2
                    ca0[x0, y1, z1] += w011 * g0; ca1[x0, y1, z1] += w011 * g1; ca2[x0, y1, z1] += w011 * g2
                    ca0[x1, y0, z0] += w100 * g0; ca1[x1, y0, z0] += w100 * g1; ca2[x1, y0, z0] += w100 * g2
                    ca0[x1, y0, z1] += w101 * g0; ca1[x1, y0, z1] += w101 * g1; ca2[x1, y0, z1] += w101 * g2
                    ca0[x1, y1, z0] += w110 * g0; ca1[x1, y1, z0] += w110 * g1; ca2[x1, y1, z0] += w110 * g2
                    ca0[x1, y1, z1] += w111 * g0; ca1[x1, y1, z1] += w111 * g1; ca2[x1, y1, z1] += w111 * g2
                else:
                    for dx in range(2):
                        xi = x0 + dx
                        if xi < 0 or xi >= nx:
                            continue
                        wx = fx if dx == 1 else gx
                        sx = 1.0 if dx == 1 else -1.0
                        for dy in range(2):
                            yi = y0 + dy
                            if yi < 0 or yi >= ny:
                                continue
                            wy = fy if dy == 1 else gy
                            sy = 1.0 if dy == 1 else -1.0
                            for dz in range(2):
                                zi = z0 + dz
                                if zi < 0 or zi >= nz:
                                    continue
                                wz = fz if dz == 1 else gz
                                sz = 1.0 if dz == 1 else -1.0
                                w = wx * wy * wz
                                ca0[xi, yi, zi] += w * g0
                                ca1[xi, yi, zi] += w * g1
                                ca2[xi, yi, zi] += w * g2
                                vdot = (a0[xi, yi, zi] * g0 + a1[xi, yi, zi] * g1
                                        + a2[xi, yi, zi] * g2)
                                dX += sx * wy * wz * vdot
                                dY += wx * sy * wz * vdot
                                dZ += wx * wy * sz * vdot
                cb0[ix, iy, iz] = dX + g0
                cb1[ix, iy, iz] = dY + g1
                cb2[ix, iy, iz] = dZ + g2


@numba.njit(cache=True, fastmath=True)
def warp_kernel(img, u0, u1, u2, out):
    """Scalar warp: out(x) = img(x + u(x)) with zero padding."""
    nx, ny, nz = img.shape
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                x = ix + u0[ix, iy, iz]
                y = iy + u1[ix, iy, iz]
                z = iz + u2[ix, iy, iz]
                x0 = int(np.floor(x)); y0 = int(np.floor(y)); z0 = int(np.floor(z))
                fx = x - x0; fy = y - y0; fz = z - z0
                gx = 1.0 - fx; gy = 1.0 - fy; gz = 1.0 - fz
                if 0 <= x0 and x0 + 1 < nx and 0 <= y0 and y0 + 1 < ny and 0 <= z0 and z0 + 1 < nz:
                    x1 = x0 + 1; y1 = y0 + 1; z1 = z0 + 1
                    out[ix, iy, iz] = (gx * gy * gz * img[x0, y0, z0] + gx * gy * fz * img[x0, y0, z1]
                                       + gx * fy * gz * img[x0, y1, z0] + gx * fy * fz * img[x0, y1, z1]
                                       + fx * gy * gz * img[x1, y0, z0] + fx * gy * fz * img[x1, y0, z1]
                                       + fx * fy * gz * img[x1, y1, z0] + fx * fy * fz * img[x1, y1, z1])
                else:
                    acc = 0.0
                    for dx in range(2):
                        xi = x0 + dx
                        if xi < 0 or xi >= nx:
                            continue
                        wx = fx if dx == 1 else gx
                        for dy in range(2):
                            yi = y0 + dy
                            if yi < 0 or yi >= ny:
                                continue
                            wxy = wx * (fy if dy == 1 else gy)
                            for dz in range(2):
                                zi = z0 + dz
                                if zi < 0 or zi >= nz:
                                    continue
                                acc += wxy * (fz if dz == 1 else gz) * img[xi, yi, zi]
                    out[ix, iy, iz] = acc


@numba.njit(cache=True, fastmath=True)
def warp_vjp_kernel(img, u0, u1, u2, cot, cu0, cu1, cu2):
    """Cotangent of warp_kernel w.r.t. the displacement (assigned, not summed)."""
    nx, ny, nz = img.shape
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                x = ix + u0[ix, iy, iz]
                y = iy + u1[ix, iy, iz]
                z = iz + u2[ix, iy, iz]
                x0 = int(np.floor(x)); y0 = int(np.floor(y)); z0 = int(np.floor(z))
                fx = x - x0; fy = y - y0; fz = z - z0
                gx = 1.0 - fx; gy = 1.0 - fy; gz = 1.0 - fz
                g = cot[ix, iy, iz]
                dX = 0.0; dY = 0.0; dZ = 0.0
                if 0 <= x0 and x0 + 1 < nx and 0 <= y0 and y0 + 1 < ny and 0 <= z0 and z0 + 1 < nz:
                    x1 = x0 + 1; y1 = y0 + 1; z1 = z0 + 1
                    v000 = img[x0, y0, z0]; v001 = img[x0, y0, z1]
                    v010 = img[x0, y1, z0]; v011 = img[x0, y1, z1]
                    v100 = img[x1, y0, z0]; v101 = img[x1, y0, z1]
                    v110 = img[x1, y1, z0]; v111 = img[x1, y1, z1]
                    dX = (-gy * gz * v000 - gy * fz * v001 - fy * gz * v010 - fy * fz * v011
                          + gy * gz * v100 + gy * fz * v101 + fy * gz * v110 + fy * fz * v111)
                    dY = (-gx * gz * v000 - gx * fz * v001 + gx * gz * v010 + gx * fz * v011
                          - fx * gz * v100 - fx * fz * v101 + fx * gz * v110 + fx * fz * v111)
                    dZ = (-gx * gy * v000 + gx * gy * v001 - gx * fy * v010 + gx * fy * v011
                          - fx * gy * v100 + fx * gy * v101 - fx * fy * v110 + fx * fy * v111)
                else:
                    for dx in range(2):
                        xi = x0 + dx
                        if xi < 0 or xi >= nx:
                            continue
                        wx = fx if dx == 1 else gx
                        sx = 1.0 if dx == 1 else -1.0
                        for dy in range(2):
                            yi = y0 + dy
                            if yi < 0 or yi >= ny:
                                continue
                            wy = fy if dy == 1 else gy
                            sy = 1.0 if dy == 1 else -1.0
                            for dz in range(2):
                                zi = z0 + dz
                                if zi < 0 or zi >= nz:
                                    continue
                                wz = fz if dz == 1 else gz
                                sz = 1.0 if dz == 1 else -1.0
                                v = img[xi, yi, zi]
                                dX += sx * wy * wz * v
                                dY += wx * sy * wz * v
                                dZ += wx * wy * sz * v
                cu0[ix, iy, iz] = dX * g
                cu1[ix, iy, iz] = dY * g
                cu2[ix, iy, iz] = dZ * g


@numba.njit(cache=True, fastmath=True)
def self_compose_vjp_kernel(a0, a1, a2, c0, c1, c2, ca0, ca1, ca2):
    """VJP of the squaring step u -> compose(u, u).

    Both argument cotangents land in (ca0..ca2), which the caller must zero:
    the sampled-field path is scattered to the 8 corners, the coordinate and
    identity paths are added at the voxel itself.
    """
    nx, ny, nz = a0.shape
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                x = ix + a0[ix, iy, iz]
                y = iy + a1[ix, iy, iz]
                z = iz + a2[ix, iy, iz]
                x0 = int(np.floor(x)); y0 = int(np.floor(y)); z0 = int(np.floor(z))
                fx = x - x0; fy = y - y0; fz = z - z0
                gx = 1.0 - fx; gy = 1.0 - fy; gz = 1.0 - fz
                g0 = c0[ix, iy, iz]; g1 = c1[ix, iy, iz]; g2 = c2[ix, iy, iz]
                dX = 0.0; dY = 0.0; dZ = 0.0
                if 0 <= x0 and x0 + 1 < nx and 0 <= y0 and y0 + 1 < ny and 0 <= z0 and z0 + 1 < nz:
                    x1 = x0 + 1; y1 = y0 + 1; z1 = z0 + 1
                    v000 = a0[x0, y0, z0] * g0 + a1[x0, y0, z0] * g1 + a2[x0, y0, z0] * g2
                    v001 = a0[x0, y0, z1] * g0 + a1[x0, y0, z1] * g1 + a2[x0, y0, z1] * g2
                    v010 = a0[x0, y1, z0] * g0 + a1[x0, y1, z0] * g1 + a2[x0, y1, z0] * g2
                    v011 = a0[x0, y1, z1] * g0 + a1[x0, y1, z1] * g1 + a2[x0, y1, z1] * g2
                    v100 = a0[x1, y0, z0] * g0 + a1[x1, y0, z0] * g1 + a2[x1, y0, z0] * g2
                    v101 = a0[x1, y0, z1] * g0 + a1[x1, y0, z1] * g1 + a2[x1, y0, z1] * g2
                    v110 = a0[x1, y1, z0] * g0 + a1[x1, y1, z0] * g1 + a2[x1, y1, z0] * g2
                    v111 = a0[x1, y1, z1] * g0 + a1[x1, y1, z1] * g1 + a2[x1, y1, z1] * g2
                    dX = (-gy * gz * v000 - gy * fz * v001 - fy * gz * v010 - fy * fz * v011
                          + gy * gz * v100 + gy * fz * v101 + fy * gz * v110 + fy * fz * v111)
                    dY = (-gx * gz * v000 - gx * fz * v001 + gx * gz * v010 + gx * fz * v011
                          - fx * gz * v100 - fx * fz * v101 + fx * gz * v110 + fx * fz * v111)
                    dZ = (-gx * gy * v000 + gx * gy * v001 - gx * fy * v010 + gx * fy * v011
                          - fx * gy * v100 + fx * gy * v101 - fx * fy * v110 + fx * fy * v111)
                    w000 = gx * gy * gz; w001 = gx * gy * fz
                    w010 = gx * fy * gz; w011 = gx * fy * fz
                    w100 = fx * gy * gz; w101 = fx * gy * fz
                    w110 = fx * fy * gz; w111 = fx * fy * fz
                    ca0[x0, y0, z0] += w000 * g0; ca1[x0, y0, z0] += w000 * g1; ca2[x0, y0, z0] += w000 * g2
                    ca0[x0, y0, z1] += w001 * g0; ca1[x0, y0, z1] += w001 * g1; ca2[x0, y0, z1] += w001 * g2
                    ca0[x0, y1, z0] += w010 * g0; ca1[x0, y1, z0] += w010 * g1; ca2[x0, y1, z0] += w010 * g2
                    ca0[x0, y1, z1] += w011 * g0; ca1[x0, y1, z1] += w011 * g1; ca2[x0, y1, z1] += w011 * g2
                    ca0[x1, y0, z0] += w100 * g0; ca1[x1, y0, z0] += w100 * g1; ca2[x1, y0, z0] += w100 * g2
                    ca0[x1, y0, z1] += w101 * g0; ca1[x1, y0, z1] += w101 * g1; ca2[x1, y0, z1] += w101 * g2
                    ca0[x1, y1, z0] += w110 * g0; ca1[x1, y1, z0] += w110 * g1; ca2[x1, y1, z0] += w110 * g2
                    ca0[x1, y1, z1] += w111 * g0; ca1[x1, y1, z1] += w111 * g1; ca2[x1, y1, z1] += w111 * g2
                else:
                    for dx in range(2):
                        xi = x0 + dx
                        if xi < 0 or xi >= nx:
                            continue
                        wx = fx if dx == 1 else gx
                        sx = 1.0 if dx == 1 else -1.0
                        for dy in range(2):
                            yi = y0 + dy
                            if yi < 0 or yi >= ny:
                                continue
                            wy = fy if dy == 1 else gy
                            sy = 1.0 if dy == 1 else -1.0
                            for dz in range(2):
                                zi = z0 + dz
                                if zi < 0 or zi >= nz:
                                    continue
                                wz = fz if dz == 1 else gz
                                sz = 1.0 if dz == 1 else -1.0
                                w = wx * wy * wz
                                ca0[xi, yi, zi] += w * g0
                                ca1[xi, yi, zi] += w * g1
                                ca2[xi, yi, zi] += w * g2
                                vdot = (a0[xi, yi, zi] * g0 + a1[xi, yi, zi] * g1
                                        + a2[xi, yi, zi] * g2)
                                dX += sx * wy * wz * vdot
                                dY += wx * sy * wz * vdot
                                dZ += wx * wy * sz * vdot
                ca0[ix, iy, iz] += dX + g0
                ca1[ix, iy, iz] += dY + g1
                ca2[ix, iy, iz] += dZ + g2


@numba.njit(cache=True, fastmath=True)
def jacobian_min_kernel(u0, u1, u2):
    """Minimum Jacobian determinant of x -> x + u(x), central differences."""
    nx, ny, nz = u0.shape
    best = 1e300
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                if 0 < ix < nx - 1:
                    d00 = 0.5 * (u0[ix + 1, iy, iz] - u0[ix - 1, iy, iz])
                    d10 = 0.5 * (u1[ix + 1, iy, iz] - u1[ix - 1, iy, iz])
                    d20 = 0.5 * (u2[ix + 1, iy, iz] - u2[ix - 1, iy, iz])
                elif ix == 0 and nx > 1:
                    d00 = u0[1, iy, iz] - u0[0, iy, iz]
                    d10 = u1[1, iy, iz] - u1[0, iy, iz]
                    d20 = u2[1, iy, iz] - u2[0, iy, iz]
                elif nx > 1:
                    d00 = u0[nx - 1, iy, iz] - u0[nx - 2, iy, iz]
                    d10 = u1[nx - 1, iy, iz] - u1[nx - 2, iy, iz]
                    d20 = u2[nx - 1, iy, iz] - u2[nx - 2, iy, iz]
                else:
                    d00 = 0.0; d10 = 0.0; d20 = 0.0
                if 0 < iy < ny - 1:
                    d01 = 0.5 * (u0[ix, iy + 1, iz] - u0[ix, iy - 1, iz])
                    d11 = 0.5 * (u1[ix, iy + 1, iz] - u1[ix, iy - 1, iz])
                    d21 = 0.5 * (u2[ix, iy + 1, iz] - u2[ix, iy - 1, iz])
                elif iy == 0 and ny > 1:
                    d01 = u0[ix, 1, iz] - u0[ix, 0, iz]
                    d11 = u1[ix, 1, iz] - u1[ix, 0, iz]
                    d21 = u2[ix, 1, iz] - u2[ix, 0, iz]
                elif ny > 1:
                    d01 = u0[ix, ny - 1, iz] - u0[ix, ny - 2, iz]
                    d11 = u1[ix, ny - 1, iz] - u1[ix, ny - 2, iz]
                    d21 = u2[ix, ny - 1, iz] - u2[ix, ny - 2, iz]
                else:
                    d01 = 0.0; d11 = 0.0; d21 = 0.0
                if 0 < iz < nz - 1:
                    d02 = 0.5 * (u0[ix, iy, iz + 1] - u0[ix, iy, iz - 1])
                    d12 = 0.5 * (u1[ix, iy, iz + 1] - u1[ix, iy, iz - 1])
                    d22 = 0.5 * (u2[ix, iy, iz + 1] - u2[ix, iy, iz - 1])
                elif iz == 0 and nz > 1:
                    d02 = u0[ix, iy, 1] - u0[ix, iy, 0]
                    d12 = u1[ix, iy, 1] - u1[ix, iy, 0]
                    d22 = u2[ix, iy, 1] - u2[ix, iy, 0]
                elif nz > 1:
                    d02 = u0[ix, iy, nz - 1] - u0[ix, iy, nz - 2]
                    d12 = u1[ix, iy, nz - 1] - u1[ix, iy, nz - 2]
                    d22 = u2[ix, iy, nz - 1] - u2[ix, iy, nz - 2]
                else:
                    d02 = 0.0; d12 = 0.0; d22 = 0.0
                a = 1.0 + d00; e = 1.0 + d11; i = 1.0 + d22
                det = (a * (e * i - d12 * d21)
                       - d01 * (d10 * i - d12 * d20)
                       + d02 * (d10 * d21 - e * d20))
                if det < best:
                    best = det
    return best




@numba.njit(cache=True, fastmath=True, inline="always")
def _cdiff(arr, ix, iy, iz, axis, n0, n1, n2):
    """Central difference with one-sided borders along one axis."""
    if axis == 0:
        if 0 < ix < n0 - 1:
            return 0.5 * (arr[ix + 1, iy, iz] - arr[ix - 1, iy, iz])
        if n0 == 1:
            return 0.0
        if ix == 0:
            return arr[1, iy, iz] - arr[0, iy, iz]
        return arr[n0 - 1, iy, iz] - arr[n0 - 2, iy, iz]
    if axis == 1:
        if 0 < iy < n1 - 1:
            return 0.5 * (arr[ix, iy + 1, iz] - arr[ix, iy - 1, iz])
        if n1 == 1:
            return 0.0
        if iy == 0:
            return arr[ix, 1, iz] - arr[ix, 0, iz]
        return arr[ix, n1 - 1, iz] - arr[ix, n1 - 2, iz]
    if 0 < iz < n2 - 1:
        return 0.5 * (arr[ix, iy, iz + 1] - arr[ix, iy, iz - 1])
    if n2 == 1:
        return 0.0
    if iz == 0:
        return arr[ix, iy, 1] - arr[ix, iy, 0]
    return arr[ix, iy, n2 - 1] - arr[ix, iy, n2 - 2]


@numba.njit(cache=True, fastmath=True)
def elasticity_fwd_kernel(u0, u1, u2, s0, s1, s2, mu, lam,
                          e00, e11, e22, e01, e02, e12, tr):
    """Symmetric strain of the mm-scaled displacement plus the elastic energy.

    Stores the six unique strain components and the trace for the backward
    pass; returns the energy sum (voxel volume NOT folded in).
    """
    nx, ny, nz = u0.shape
    energy = 0.0
    r01 = s0 / s1; r02 = s0 / s2; r10 = s1 / s0
    r12 = s1 / s2; r20 = s2 / s0; r21 = s2 / s1
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                d00 = _cdiff(u0, ix, iy, iz, 0, nx, ny, nz)
                d01 = _cdiff(u0, ix, iy, iz, 1, nx, ny, nz) * r01
                d02 = _cdiff(u0, ix, iy, iz, 2, nx, ny, nz) * r02
                d10 = _cdiff(u1, ix, iy, iz, 0, nx, ny, nz) * r10
                d11 = _cdiff(u1, ix, iy, iz, 1, nx, ny, nz)
                d12 = _cdiff(u1, ix, iy, iz, 2, nx, ny, nz) * r12
                d20 = _cdiff(u2, ix, iy, iz, 0, nx, ny, nz) * r20
                d21 = _cdiff(u2, ix, iy, iz, 1, nx, ny, nz) * r21
                d22 = _cdiff(u2, ix, iy, iz, 2, nx, ny, nz)
                a01 = 0.5 * (d01 + d10)
                a02 = 0.5 * (d02 + d20)
                a12 = 0.5 * (d12 + d21)
                t = d00 + d11 + d22
                e00[ix, iy, iz] = d00
                e11[ix, iy, iz] = d11
                e22[ix, iy, iz] = d22
                e01[ix, iy, iz] = a01
                e02[ix, iy, iz] = a02
                e12[ix, iy, iz] = a12
                tr[ix, iy, iz] = t
                energy += (mu * (d00 * d00 + d11 * d11 + d22 * d22
                                 + 2.0 * (a01 * a01 + a02 * a02 + a12 * a12))
                           + 0.5 * lam * t * t)
    return energy


@numba.njit(cache=True, fastmath=True, inline="always")
def _cot_at(e, tr, diag, two_mu, lam, ix, iy, iz):
    """Cotangent of one raw derivative component, from stored strain."""
    v = two_mu * e[ix, iy, iz]
    if diag:
        v += lam * tr[ix, iy, iz]
    return v


@numba.njit(cache=True, fastmath=True, inline="always")
def _adj0(e, tr, diag, two_mu, lam, ix, iy, iz, n):
    """Gather form of the difference-operator adjoint along axis 0."""
    if n == 1:
        return 0.0
    acc = 0.0
    if ix == 0:
        acc -= _cot_at(e, tr, diag, two_mu, lam, 0, iy, iz)
    elif ix == 1:
        acc += _cot_at(e, tr, diag, two_mu, lam, 0, iy, iz)
    if ix == n - 2:
        acc -= _cot_at(e, tr, diag, two_mu, lam, n - 1, iy, iz)
    elif ix == n - 1:
        acc += _cot_at(e, tr, diag, two_mu, lam, n - 1, iy, iz)
    if 1 <= ix - 1 <= n - 2:
        acc += 0.5 * _cot_at(e, tr, diag, two_mu, lam, ix - 1, iy, iz)
    if 1 <= ix + 1 <= n - 2:
        acc -= 0.5 * _cot_at(e, tr, diag, two_mu, lam, ix + 1, iy, iz)
    return acc


@numba.njit(cache=True, fastmath=True, inline="always")
def _adj1(e, tr, diag, two_mu, lam, ix, iy, iz, n):
    if n == 1:
        return 0.0
    acc = 0.0
    if iy == 0:
        acc -= _cot_at(e, tr, diag, two_mu, lam, ix, 0, iz)
    elif iy == 1:
        acc += _cot_at(e, tr, diag, two_mu, lam, ix, 0, iz)
    if iy == n - 2:
        acc -= _cot_at(e, tr, diag, two_mu, lam, ix, n - 1, iz)
    elif iy == n - 1:
        acc += _cot_at(e, tr, diag, two_mu, lam, ix, n - 1, iz)
    if 1 <= iy - 1 <= n - 2:
        acc += 0.5 * _cot_at(e, tr, diag, two_mu, lam, ix, iy - 1, iz)
    if 1 <= iy + 1 <= n - 2:
        acc -= 0.5 * _cot_at(e, tr, diag, two_mu, lam, ix, iy + 1, iz)
    return acc


@numba.njit(cache=True, fastmath=True, inline="always")
def _adj2(e, tr, diag, two_mu, lam, ix, iy, iz, n):
    if n == 1:
        return 0.0
    acc = 0.0
    if iz == 0:
        acc -= _cot_at(e, tr, diag, two_mu, lam, ix, iy, 0)
    elif iz == 1:
        acc += _cot_at(e, tr, diag, two_mu, lam, ix, iy, 0)
    if iz == n - 2:
        acc -= _cot_at(e, tr, diag, two_mu, lam, ix, iy, n - 1)
    elif iz == n - 1:
        acc += _cot_at(e, tr, diag, two_mu, lam, ix, iy, n - 1)
    if 1 <= iz - 1 <= n - 2:
        acc += 0.5 * _cot_at(e, tr, diag, two_mu, lam, ix, iy, iz - 1)
    if 1 <= iz + 1 <= n - 2:
        acc -= 0.5 * _cot_at(e, tr, diag, two_mu, lam, ix, iy, iz + 1)
    return acc


@numba.njit(cache=True, fastmath=True)
def elasticity_bwd_kernel(e00, e11, e22, e01, e02, e12, tr,
                          s0, s1, s2, mu, lam, scale, g0, g1, g2):
    """Gradient of the elastic energy w.r.t. the displacement (assigned).

    ``scale`` multiplies the whole gradient; fold the voxel volume and any
    outer loss weight into it. The finite-difference adjoint is applied in
    gather form; interior voxels take a branch-free fast path, the border
    shell falls back to the exact case analysis.
    """
    nx, ny, nz = tr.shape
    two_mu = 2.0 * mu
    r01 = s0 / s1; r02 = s0 / s2; r10 = s1 / s0
    r12 = s1 / s2; r20 = s2 / s0; r21 = s2 / s1
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                if 2 <= ix <= nx - 3 and 2 <= iy <= ny - 3 and 2 <= iz <= nz - 3:
                    # interior: (D^T c)[p] = (c[p-1] - c[p+1]) / 2 on every axis
                    a0 = (two_mu * e00[ix - 1, iy, iz] + lam * tr[ix - 1, iy, iz]
                          - two_mu * e00[ix + 1, iy, iz] - lam * tr[ix + 1, iy, iz])
                    a1 = (e01[ix, iy - 1, iz] - e01[ix, iy + 1, iz]) * two_mu * r01
                    a2 = (e02[ix, iy, iz - 1] - e02[ix, iy, iz + 1]) * two_mu * r02
                    g0[ix, iy, iz] = 0.5 * scale * (a0 + a1 + a2)
                    a0 = (e01[ix - 1, iy, iz] - e01[ix + 1, iy, iz]) * two_mu * r10
                    a1 = (two_mu * e11[ix, iy - 1, iz] + lam * tr[ix, iy - 1, iz]
                          - two_mu * e11[ix, iy + 1, iz] - lam * tr[ix, iy + 1, iz])
                    a2 = (e12[ix, iy, iz - 1] - e12[ix, iy, iz + 1]) * two_mu * r12
                    g1[ix, iy, iz] = 0.5 * scale * (a0 + a1 + a2)
                    a0 = (e02[ix - 1, iy, iz] - e02[ix + 1, iy, iz]) * two_mu * r20
                    a1 = (e12[ix, iy - 1, iz] - e12[ix, iy + 1, iz]) * two_mu * r21
                    a2 = (two_mu * e22[ix, iy, iz - 1] + lam * tr[ix, iy, iz - 1]
                          - two_mu * e22[ix, iy, iz + 1] - lam * tr[ix, iy, iz + 1])
                    g2[ix, iy, iz] = 0.5 * scale * (a0 + a1 + a2)
                else:
                    acc = _adj0(e00, tr, True, two_mu, lam, ix, iy, iz, nx)
                    acc += _adj1(e01, tr, False, two_mu, lam, ix, iy, iz, ny) * r01
                    acc += _adj2(e02, tr, False, two_mu, lam, ix, iy, iz, nz) * r02
                    g0[ix, iy, iz] = acc * scale
                    acc = _adj0(e01, tr, False, two_mu, lam, ix, iy, iz, nx) * r10
                    acc += _adj1(e11, tr, True, two_mu, lam, ix, iy, iz, ny)
                    acc += _adj2(e12, tr, False, two_mu, lam, ix, iy, iz, nz) * r12
                    g1[ix, iy, iz] = acc * scale
                    acc = _adj0(e02, tr, False, two_mu, lam, ix, iy, iz, nx) * r20
                    acc += _adj1(e12, tr, False, two_mu, lam, ix, iy, iz, ny) * r21
                    acc += _adj2(e22, tr, True, two_mu, lam, ix, iy, iz, nz)
                    g2[ix, iy, iz] = acc * scale
