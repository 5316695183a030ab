"""Compiled per-tile kernels for the forward blend and both backward layouts.

The forward pass walks each pixel front to back and records, besides the
color, exactly the state the backward pass needs to replay the walk: the
final transmittance, the number of slots traversed, and whether the walk
ended by early termination (the crossing splat is not blended).

Both backward layouts accumulate identical per-(pixel, slot) increments into
per-instance rows [dcolor0..2, dlogit, dmu_x, dmu_y, dconic_a, dconic_b,
dconic_c]; they differ only in the order of summation.  The pixel-major
reference walks pixel by pixel and scatter-adds into rows.  The splat-major
layout stages increments for a chunk of slots across all 256 tile pixels
(sequential pass A), then reduces each slot's row with branch-free sums
(pass B) and writes it once.  Rows live in disjoint per-tile ranges, so tile
ranges can run on worker threads and still produce bit-identical results.
"""

import math

import numpy as np
from numba import njit

TILE = 16
ALPHA_MIN = 1.0 / 255.0
ALPHA_CAP = 0.99
T_EPS = 1e-4
SOFT_TAU = 0.01
CHUNK = 16


@njit(cache=True, nogil=True)
def forward_tile_range(
    tile_lo,
    tile_hi,
    tiles_x,
    width,
    height,
    tile_starts,
    tile_ends,
    inst_splat,
    means2d,
    conics,
    opacities,
    colors,
    bg,
    img,
    t_final,
    n_walk,
    terminated,
    hard_count,
    soft_count,
):
    for t in range(tile_lo, tile_hi):
        s0 = tile_starts[t]
        s1 = tile_ends[t]
        y00 = (t // tiles_x) * TILE
        x00 = (t % tiles_x) * TILE
        for yy in range(y00, min(y00 + TILE, height)):
            for xx in range(x00, min(x00 + TILE, width)):
                trans = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                nw = 0
                term = 0
                hard = 0
                soft = 0.0
                for s in range(s0, s1):
                    k = s - s0
                    nw = k + 1
                    g = inst_splat[s]
                    dx = xx - means2d[g, 0]
                    dy = yy - means2d[g, 1]
                    power = (
                        -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy)
                        - conics[g, 1] * dx * dy
                    )
                    if power > 0.0:
                        continue
                    alpha = opacities[g] * math.exp(power)
                    if alpha > ALPHA_CAP:
                        alpha = ALPHA_CAP
                    soft += 1.0 / (1.0 + math.exp(-(alpha - ALPHA_MIN) / SOFT_TAU))
                    if alpha < ALPHA_MIN:
                        continue
                    test_t = trans * (1.0 - alpha)
                    if test_t < T_EPS:
                        term = 1
                        break
                    w = alpha * trans
                    c0 += colors[g, 0] * w
                    c1 += colors[g, 1] * w
                    c2 += colors[g, 2] * w
                    hard += 1
                    trans = test_t
                img[yy, xx, 0] = c0 + bg[0] * trans
                img[yy, xx, 1] = c1 + bg[1] * trans
                img[yy, xx, 2] = c2 + bg[2] * trans
                t_final[yy, xx] = trans
                n_walk[yy, xx] = nw
                terminated[yy, xx] = term
                hard_count[yy, xx] = hard
                soft_count[yy, xx] = soft


@njit(cache=True, nogil=True)
def backward_pixel_range(
    tile_lo,
    tile_hi,
    tiles_x,
    width,
    height,
    tile_starts,
    tile_ends,
    inst_splat,
    means2d,
    conics,
    opacities,
    colors,
    bg,
    w_img,
    w_soft,
    t_final,
    n_walk,
    terminated,
    inst_rows,
):
    for t in range(tile_lo, tile_hi):
        s0 = tile_starts[t]
        s1 = tile_ends[t]
        if s1 <= s0:
            continue
        y00 = (t // tiles_x) * TILE
        x00 = (t % tiles_x) * TILE
        for yy in range(y00, min(y00 + TILE, height)):
            for xx in range(x00, min(x00 + TILE, width)):
                nw = n_walk[yy, xx]
                if nw == 0:
                    continue
                term = terminated[yy, xx]
                trans = t_final[yy, xx]
                ws = w_soft[yy, xx]
                w0 = w_img[yy, xx, 0]
                w1 = w_img[yy, xx, 1]
                w2 = w_img[yy, xx, 2]
                sacc0 = bg[0] * trans
                sacc1 = bg[1] * trans
                sacc2 = bg[2] * trans
                for k in range(nw - 1, -1, -1):
                    s = s0 + k
                    g = inst_splat[s]
                    dx = xx - means2d[g, 0]
                    dy = yy - means2d[g, 1]
                    power = (
                        -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy)
                        - conics[g, 1] * dx * dy
                    )
                    if power > 0.0:
                        continue
                    opa = opacities[g]
                    alpha = opa * math.exp(power)
                    capped = alpha > ALPHA_CAP
                    if capped:
                        alpha = ALPHA_CAP
                    blended = alpha >= ALPHA_MIN and not (term == 1 and k == nw - 1)
                    dlda = 0.0
                    if blended:
                        ti = trans / (1.0 - alpha)
                        aw = alpha * ti
                        inst_rows[s, 0] += aw * w0
                        inst_rows[s, 1] += aw * w1
                        inst_rows[s, 2] += aw * w2
                        inv = 1.0 / (1.0 - alpha)
                        dlda = (
                            w0 * (colors[g, 0] * ti - sacc0 * inv)
                            + w1 * (colors[g, 1] * ti - sacc1 * inv)
                            + w2 * (colors[g, 2] * ti - sacc2 * inv)
                        )
                        sacc0 += colors[g, 0] * aw
                        sacc1 += colors[g, 1] * aw
                        sacc2 += colors[g, 2] * aw
                        trans = ti
                    if not capped:
                        sv = 1.0 / (1.0 + math.exp(-(alpha - ALPHA_MIN) / SOFT_TAU))
                        gsoft = ws * sv * (1.0 - sv) / SOFT_TAU
                        inst_rows[s, 3] += (dlda + gsoft) * alpha * (1.0 - opa)
                        if blended:
                            gpow = dlda * alpha
                            inst_rows[s, 4] += gpow * (conics[g, 0] * dx + conics[g, 1] * dy)
                            inst_rows[s, 5] += gpow * (conics[g, 1] * dx + conics[g, 2] * dy)
                            inst_rows[s, 6] += gpow * (-0.5 * dx * dx)
                            inst_rows[s, 7] += gpow * (-dx * dy)
                            inst_rows[s, 8] += gpow * (-0.5 * dy * dy)


@njit(cache=True, nogil=True)
def backward_splat_range(
    tile_lo,
    tile_hi,
    tiles_x,
    width,
    height,
    tile_starts,
    tile_ends,
    inst_splat,
    means2d,
    conics,
    opacities,
    colors,
    bg,
    w_img,
    w_soft,
    t_final,
    n_walk,
    terminated,
    inst_rows,
):
    npx = TILE * TILE
    staged = np.zeros((CHUNK, npx, 9))
    trans = np.empty(npx)
    sacc = np.empty((npx, 3))
    wpx = np.empty((npx, 3))
    wsf = np.empty(npx)
    pxs = np.empty(npx)
    pys = np.empty(npx)
    nwk = np.empty(npx, dtype=np.int64)
    trm = np.empty(npx, dtype=np.uint8)

    for t in range(tile_lo, tile_hi):
        s0 = tile_starts[t]
        s1 = tile_ends[t]
        if s1 <= s0:
            continue
        y00 = (t // tiles_x) * TILE
        x00 = (t % tiles_x) * TILE
        max_walk = 0
        for p in range(npx):
            yy = y00 + p // TILE
            xx = x00 + p % TILE
            pxs[p] = xx
            pys[p] = yy
            if yy < height and xx < width:
                nwk[p] = n_walk[yy, xx]
                trm[p] = terminated[yy, xx]
                trans[p] = t_final[yy, xx]
                for ch in range(3):
                    sacc[p, ch] = bg[ch] * trans[p]
                    wpx[p, ch] = w_img[yy, xx, ch]
                wsf[p] = w_soft[yy, xx]
                if nwk[p] > max_walk:
                    max_walk = nwk[p]
            else:
                nwk[p] = 0
                trm[p] = 0

        k_hi = max_walk
        while k_hi > 0:
            k_lo = k_hi - CHUNK
            if k_lo < 0:
                k_lo = 0
            nc = k_hi - k_lo

            # pass A: sequential replay, slot-outer so per-splat parameters
            # stay in registers across the whole tile
            for r in range(nc):
                k = k_hi - 1 - r
                s = s0 + k
                g = inst_splat[s]
                mx = means2d[g, 0]
                my = means2d[g, 1]
                ca = conics[g, 0]
                cb = conics[g, 1]
                cc = conics[g, 2]
                opa = opacities[g]
                col0 = colors[g, 0]
                col1 = colors[g, 1]
                col2 = colors[g, 2]
                for p in range(npx):
                    for j in range(9):
                        staged[r, p, j] = 0.0
                    if k >= nwk[p]:
                        continue
                    dx = pxs[p] - mx
                    dy = pys[p] - my
                    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                    if power > 0.0:
                        continue
                    alpha = opa * math.exp(power)
                    capped = alpha > ALPHA_CAP
                    if capped:
                        alpha = ALPHA_CAP
                    blended = alpha >= ALPHA_MIN and not (trm[p] == 1 and k == nwk[p] - 1)
                    dlda = 0.0
                    if blended:
                        ti = trans[p] / (1.0 - alpha)
                        aw = alpha * ti
                        staged[r, p, 0] = aw * wpx[p, 0]
                        staged[r, p, 1] = aw * wpx[p, 1]
                        staged[r, p, 2] = aw * wpx[p, 2]
                        inv = 1.0 / (1.0 - alpha)
                        dlda = (
                            wpx[p, 0] * (col0 * ti - sacc[p, 0] * inv)
                            + wpx[p, 1] * (col1 * ti - sacc[p, 1] * inv)
                            + wpx[p, 2] * (col2 * ti - sacc[p, 2] * inv)
                        )
                        sacc[p, 0] += col0 * aw
                        sacc[p, 1] += col1 * aw
                        sacc[p, 2] += col2 * aw
                        trans[p] = ti
                    if not capped:
                        sv = 1.0 / (1.0 + math.exp(-(alpha - ALPHA_MIN) / SOFT_TAU))
                        gsoft = wsf[p] * sv * (1.0 - sv) / SOFT_TAU
                        staged[r, p, 3] = (dlda + gsoft) * alpha * (1.0 - opa)
                        if blended:
                            gpow = dlda * alpha
                            staged[r, p, 4] = gpow * (ca * dx + cb * dy)
                            staged[r, p, 5] = gpow * (cb * dx + cc * dy)
                            staged[r, p, 6] = gpow * (-0.5 * dx * dx)
                            staged[r, p, 7] = gpow * (-dx * dy)
                            staged[r, p, 8] = gpow * (-0.5 * dy * dy)

            # pass B: branch-free reduction, one streamed row write per slot
            for r in range(nc):
                s = s0 + k_hi - 1 - r
                a0 = 0.0
                a1 = 0.0
                a2 = 0.0
                a3 = 0.0
                a4 = 0.0
                a5 = 0.0
                a6 = 0.0
                a7 = 0.0
                a8 = 0.0
                for p in range(npx):
                    a0 += staged[r, p, 0]
                    a1 += staged[r, p, 1]
                    a2 += staged[r, p, 2]
                    a3 += staged[r, p, 3]
                    a4 += staged[r, p, 4]
                    a5 += staged[r, p, 5]
                    a6 += staged[r, p, 6]
                    a7 += staged[r, p, 7]
                    a8 += staged[r, p, 8]
                inst_rows[s, 0] = a0
                inst_rows[s, 1] = a1
                inst_rows[s, 2] = a2
                inst_rows[s, 3] = a3
                inst_rows[s, 4] = a4
                inst_rows[s, 5] = a5
                inst_rows[s, 6] = a6
                inst_rows[s, 7] = a7
                inst_rows[s, 8] = a8
            k_hi = k_lo
