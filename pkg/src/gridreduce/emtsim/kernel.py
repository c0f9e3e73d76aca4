"""Compiled time-stepping loop and the per-step helpers it shares with the
Python-level FDNE and TSA objects.

The network is solved as two identical decoupled copies (alpha and beta
axes); column 0 of every (n, 2) array is alpha and column 1 is beta.
"""
from __future__ import annotations

import numpy as np
from numba import njit

# TSA real-parameter layout
T_E, T_X, T_DELTA, T_DW, T_PM, T_H2, T_D, T_H, T_W0, T_PE = range(10)
T_NREAL = 10
# TSA complex-parameter layout
T_YBB, T_YBG, T_YGB, T_YGG, T_Y60 = range(5)
T_NCPLX = 5


@njit(cache=True)
def fdne_history(a, b, ih, vh, out):
    """out[ax] = -sum a_i i(k-i) + sum b_i v(k-i); row 0 of ih/vh is k-1."""
    n = a.shape[0]
    for ax in range(2):
        acc = 0.0
        for i in range(n):
            acc += -a[i] * ih[i, ax] + b[i] * vh[i, ax]
        out[ax] = acc


@njit(cache=True)
def fdne_push(ih, vh, i_new, v_new):
    n = ih.shape[0]
    for i in range(n - 1, 0, -1):
        for ax in range(2):
            ih[i, ax] = ih[i - 1, ax]
            vh[i, ax] = vh[i - 1, ax]
    if n > 0:
        for ax in range(2):
            ih[0, ax] = i_new[ax]
            vh[0, ax] = v_new[ax]


@njit(cache=True)
def tsa_solve(tc, tr, delta, vb):
    """Generator-port voltage and machine electrical power for rotor angle delta."""
    e = tr[T_E] * np.exp(1j * delta)
    ig = e / (1j * tr[T_X])
    vg = (ig - tc[T_YGB] * vb) / tc[T_YGG]
    im = (e - vg) / (1j * tr[T_X])
    pe = (e * np.conj(im)).real
    return vg, pe


@njit(cache=True)
def tsa_update(tc, tr, vb):
    """One macro step of the phasor equivalent; returns the boundary injection.

    Mutates the rotor angle, speed deviation and last electrical power in tr.
    """
    h = tr[T_H]
    w0 = tr[T_W0]
    delta = tr[T_DELTA]
    dw = tr[T_DW]
    vg, pe = tsa_solve(tc, tr, delta, vb)
    k1w = (tr[T_PM] - pe - tr[T_D] * dw) / tr[T_H2]
    k1d = w0 * dw
    dp = delta + h * k1d
    wp = dw + h * k1w
    _, pe_p = tsa_solve(tc, tr, dp, vb)
    k2w = (tr[T_PM] - pe_p - tr[T_D] * wp) / tr[T_H2]
    k2d = w0 * wp
    tr[T_DELTA] = delta + 0.5 * h * (k1d + k2d)
    tr[T_DW] = dw + 0.5 * h * (k1w + k2w)
    tr[T_PE] = pe
    ib = -(tc[T_YBB] * vb + tc[T_YBG] * vg)
    return ib + tc[T_Y60] * vb


@njit(cache=True)
def window_phasor(ring, tw):
    """Full-cycle DFT of a ring buffer whose slot j holds a sample with k % N == j."""
    n = ring.shape[0]
    acc = 0.0 + 0.0j
    for j in range(n):
        acc += ring[j] * tw[j]
    return 2.0 * acc / n


@njit(cache=True)
def advance(k0, k1, kb, nsub, dt, w0,
            ginv, guk, ge, hv, hi, ef, et, nu,
            v, ib,
            s_node, s_vals,
            m_node, m_elem, m_E, m_st, m_par,
            c_node, c_amp,
            x_inj,
            f_node, f_a, f_b, f_b0, f_ih, f_vh,
            t_node, t_ring, t_tw, t_M, t_c, t_r, t_out,
            rec_nodes, rec_elems, rec_v, rec_i, rec_m, rec_f, rec_t):
    """Advance from step k0 to k1; record and schedule rows are k - kb.

    ``nsub`` is 1 for a trapezoidal step or 2 for two backward-Euler half
    steps (the coefficient arrays must match). Machine state m_st rows are
    (delta, dw, pe); m_par rows are (pm, 2H, D). Returns -1 on success or the
    first step index whose solution is not finite.
    """
    n_all = v.shape[0] - 1
    ne = ge.shape[0]
    nk = n_all - nu
    h = dt / nsub
    inj = np.zeros((n_all + 1, 2))
    hist = np.zeros((ne, 2))
    rhs = np.zeros(nu)
    nf = f_node.shape[0]
    nt = t_node.shape[0]
    fh = np.zeros((nf, 2))
    nwin = t_tw.shape[0]
    has_rot = c_node.shape[0] + nt > 0
    nfo = f_a.shape[1]
    for k in range(k0 + 1, k1 + 1):
        for a in range(nf):
            for ax in range(2):
                acc = 0.0
                for i in range(f_a.shape[1]):
                    acc += -f_a[a, i] * f_ih[a, i, ax] + f_b[a, i] * f_vh[a, i, ax]
                fh[a, ax] = acc
        for s in range(nsub):
            t = (k - 1) * dt + (s + 1) * h
            frac = (s + 1.0) / nsub
            for i in range(n_all + 1):
                inj[i, 0] = x_inj[i, 0]
                inj[i, 1] = x_inj[i, 1]
            for e in range(ne):
                for ax in range(2):
                    vb_ = v[ef[e], ax] - v[et[e], ax]
                    hh = hv[e] * vb_ + hi[e] * ib[e, ax]
                    hist[e, ax] = hh
                    inj[ef[e], ax] -= hh
                    inj[et[e], ax] += hh
            if has_rot:
                rot = np.exp(1j * w0 * t)
            else:
                rot = 1.0 + 0.0j
            for c in range(c_node.shape[0]):
                z = c_amp[c] * rot
                inj[c_node[c], 0] += z.real
                inj[c_node[c], 1] += z.imag
            for a in range(nf):
                inj[f_node[a], 0] -= fh[a, 0]
                inj[f_node[a], 1] -= fh[a, 1]
            for a in range(nt):
                z = t_out[a] * rot
                inj[t_node[a], 0] += z.real
                inj[t_node[a], 1] += z.imag
            for i in range(s_node.shape[0]):
                for ax in range(2):
                    v[s_node[i], ax] = (1.0 - frac) * s_vals[k - 1 - kb, i, ax] + frac * s_vals[k - kb, i, ax]
            for m in range(m_node.shape[0]):
                ang = w0 * t + m_st[m, 0]
                v[m_node[m], 0] = m_E[m] * np.cos(ang)
                v[m_node[m], 1] = m_E[m] * np.sin(ang)
            for ax in range(2):
                for i in range(nu):
                    acc = inj[i, ax]
                    for j in range(nk):
                        acc -= guk[i, j] * v[nu + j, ax]
                    rhs[i] = acc
                for i in range(nu):
                    acc = 0.0
                    for j in range(nu):
                        acc += ginv[i, j] * rhs[j]
                    v[i, ax] = acc
            v[n_all, 0] = 0.0
            v[n_all, 1] = 0.0
            for e in range(ne):
                for ax in range(2):
                    ib[e, ax] = ge[e] * (v[ef[e], ax] - v[et[e], ax]) + hist[e, ax]
            for m in range(m_node.shape[0]):
                el = m_elem[m]
                pe = v[m_node[m], 0] * ib[el, 0] + v[m_node[m], 1] * ib[el, 1]
                pm = m_par[m, 0]
                h2 = m_par[m, 1]
                dmp = m_par[m, 2]
                dw = m_st[m, 1]
                k1w = (pm - pe - dmp * dw) / h2
                wp = dw + h * k1w
                k2w = (pm - pe - dmp * wp) / h2
                m_st[m, 0] += 0.5 * h * w0 * (dw + wp)
                m_st[m, 1] = dw + 0.5 * h * (k1w + k2w)
                m_st[m, 2] = pe
        ok = True
        for i in range(n_all):
            if not (np.isfinite(v[i, 0]) and np.isfinite(v[i, 1])):
                ok = False
        if not ok:
            return k
        for a in range(nf):
            nd = f_node[a]
            for ax in range(2):
                cur = f_b0[a] * v[nd, ax] + fh[a, ax]
                rec_f[k - kb, a, ax] = cur
                for i in range(nfo - 1, 0, -1):
                    f_ih[a, i, ax] = f_ih[a, i - 1, ax]
                    f_vh[a, i, ax] = f_vh[a, i - 1, ax]
                if nfo > 0:
                    f_ih[a, 0, ax] = cur
                    f_vh[a, 0, ax] = v[nd, ax]
        for a in range(nt):
            # record what was injected at this step, then take the new sample
            z = t_out[a] * rot
            rec_t[k - kb, a, 0] = z.real
            rec_t[k - kb, a, 1] = z.imag
            t_ring[a, k % nwin] = v[t_node[a], 0]
            if k % t_M == 0:
                vb = window_phasor(t_ring[a], t_tw)
                t_out[a] = tsa_update(t_c[a], t_r[a], vb)
            rec_t[k - kb, a, 2] = t_r[a, T_DELTA]
            rec_t[k - kb, a, 3] = t_r[a, T_DW]
        for i in range(rec_nodes.shape[0]):
            rec_v[k - kb, i, 0] = v[rec_nodes[i], 0]
            rec_v[k - kb, i, 1] = v[rec_nodes[i], 1]
        for i in range(rec_elems.shape[0]):
            rec_i[k - kb, i, 0] = ib[rec_elems[i], 0]
            rec_i[k - kb, i, 1] = ib[rec_elems[i], 1]
        for m in range(m_node.shape[0]):
            rec_m[k - kb, m, 0] = m_st[m, 0]
            rec_m[k - kb, m, 1] = m_st[m, 1]
            rec_m[k - kb, m, 2] = m_st[m, 2]
    return -1
