# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled rollout kernel. Same contract as :mod:`dilar._rollout_py`."""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, sin, cos, exp, log1p, fabs, isfinite

cnp.import_array()

cdef enum:
    NSTAGE = 4
    NSLOT = 5  # four RK stages plus the penalty evaluation


cdef inline double softplus(double o) noexcept nogil:
    return (o if o > 0.0 else 0.0) + log1p(exp(-fabs(o)))


cdef inline double sigmoid(double o) noexcept nogil:
    cdef double e
    if o >= 0.0:
        return 1.0 / (1.0 + exp(-o))
    e = exp(o)
    return e / (1.0 + e)


cdef struct Net:
    int nl            # number of layers
    int* sizes        # nl + 1 entries
    int* woff
    int* boff
    int* aoff         # activation offsets, nl + 1 entries
    int units         # total activations per evaluation
    int maxw          # widest layer
    const double* phi


cdef struct Phys:
    double k1, k2, k3, k4, k5
    int kind


cdef void mlp_fwd(Net* net, double* acts) noexcept nogil:
    cdef int k, i, j, fi, fo
    cdef double s
    cdef const double* W
    cdef double* hin
    cdef double* hout
    for k in range(net.nl):
        fi = net.sizes[k]
        fo = net.sizes[k + 1]
        W = net.phi + net.woff[k]
        hin = acts + net.aoff[k]
        hout = acts + net.aoff[k + 1]
        for i in range(fo):
            s = net.phi[net.boff[k] + i]
            for j in range(fi):
                s += W[i * fi + j] * hin[j]
            if k < net.nl - 1:
                hout[i] = tanh(s)
            else:
                hout[i] = s


cdef void mlp_bwd(Net* net, double* acts, double* d, double* tmp, double* gphi) noexcept nogil:
    """Backprop ``d`` (output cotangent, overwritten) to the input; result left in ``d``."""
    cdef int k, i, j, fi, fo
    cdef double* hin
    cdef double* hout
    cdef const double* W
    cdef double* gW
    cdef double di
    for k in range(net.nl - 1, -1, -1):
        fi = net.sizes[k]
        fo = net.sizes[k + 1]
        hin = acts + net.aoff[k]
        hout = acts + net.aoff[k + 1]
        W = net.phi + net.woff[k]
        gW = gphi + net.woff[k]
        if k < net.nl - 1:
            for i in range(fo):
                d[i] *= 1.0 - hout[i] * hout[i]
        for j in range(fi):
            tmp[j] = 0.0
        for i in range(fo):
            di = d[i]
            gphi[net.boff[k] + i] += di
            for j in range(fi):
                gW[i * fi + j] += di * hin[j]
                tmp[j] += W[i * fi + j] * di
        for j in range(fi):
            d[j] = tmp[j]


cdef void residual(Phys* p, Net* net, const double* x, double u, double* acts, double* r) noexcept nogil:
    cdef double o, sp
    acts[0] = x[0]
    acts[1] = x[1]
    acts[2] = x[2]
    acts[3] = u
    mlp_fwd(net, acts)
    o = acts[net.aoff[net.nl]]
    if p.kind == 1:
        r[0] = acts[net.aoff[net.nl]]
        r[1] = acts[net.aoff[net.nl] + 1]
        r[2] = acts[net.aoff[net.nl] + 2]
    elif p.kind == 2:
        r[0] = 0.0
        r[1] = 0.0
        r[2] = o
    else:
        sp = softplus(o)
        r[0] = 0.0
        r[1] = 0.0
        r[2] = -sp * sp * x[2]


cdef void residual_vjp(Phys* p, Net* net, const double* x, double* acts, const double* v,
                       double* gx, double* d, double* tmp, double* gphi) noexcept nogil:
    cdef double o, sp, sg
    if p.kind == 1:
        d[0] = v[0]
        d[1] = v[1]
        d[2] = v[2]
    elif p.kind == 2:
        d[0] = v[2]
    else:
        o = acts[net.aoff[net.nl]]
        sp = softplus(o)
        sg = sigmoid(o)
        d[0] = v[2] * (-2.0 * sp * sg * x[2])
        gx[2] += v[2] * (-sp * sp)
    mlp_bwd(net, acts, d, tmp, gphi)
    gx[0] += d[0]
    gx[1] += d[1]
    gx[2] += d[2]


cdef void dyn(Phys* p, Net* net, const double* x, double u, double* acts, double* f) noexcept nogil:
    cdef double w = x[0]
    cdef double r[3]
    f[0] = p.k2 * w + p.k3 * w * w + p.k1 * u
    f[1] = x[2]
    f[2] = p.k4 * w * w - p.k5 * sin(x[1])
    if p.kind != 0:
        residual(p, net, x, u, acts, r)
        f[0] += r[0]
        f[1] += r[1]
        f[2] += r[2]


cdef void dyn_vjp(Phys* p, Net* net, const double* x, double u, double* acts, const double* v,
                  double* gx, double* gtheta, double* d, double* tmp, double* gphi) noexcept nogil:
    cdef double w = x[0]
    cdef double a = x[1]
    gx[0] = v[0] * (p.k2 + 2.0 * p.k3 * w) + v[2] * (2.0 * p.k4 * w)
    gx[1] = -v[2] * p.k5 * cos(a)
    gx[2] = v[1]
    gtheta[0] += v[0] * u
    gtheta[1] += v[0] * w
    gtheta[2] += v[0] * w * w
    gtheta[3] += v[2] * w * w
    gtheta[4] -= v[2] * sin(a)
    if p.kind != 0:
        residual_vjp(p, net, x, acts, v, gx, d, tmp, gphi)


cdef class _Setup:
    """Owns the index arrays referenced by a :c:type:`Net`."""
    cdef int[::1] sizes, woff, boff, aoff
    cdef Net net
    cdef Phys phys
    cdef const double[::1] phi_buf

    def __init__(self, theta, phi, sizes, int kind):
        cdef int nl = len(sizes) - 1
        cdef int k, off = 0, aoff = 0, maxw = 0
        self.sizes = np.asarray(sizes, dtype=np.intc).copy()
        self.woff = np.zeros(max(nl, 1), dtype=np.intc)
        self.boff = np.zeros(max(nl, 1), dtype=np.intc)
        self.aoff = np.zeros(nl + 1, dtype=np.intc)
        for k in range(nl + 1):
            self.aoff[k] = aoff
            aoff += self.sizes[k]
            if self.sizes[k] > maxw:
                maxw = self.sizes[k]
        for k in range(nl):
            self.woff[k] = off
            off += self.sizes[k] * self.sizes[k + 1]
            self.boff[k] = off
            off += self.sizes[k + 1]
        phi = np.ascontiguousarray(phi, dtype=np.float64)
        if kind != 0 and phi.shape[0] != off:
            raise ValueError(f"phi has length {phi.shape[0]}, layer sizes need {off}")
        self.phi_buf = phi if phi.shape[0] > 0 else np.zeros(1)
        self.net.nl = nl
        self.net.sizes = &self.sizes[0]
        self.net.woff = &self.woff[0]
        self.net.boff = &self.boff[0]
        self.net.aoff = &self.aoff[0]
        self.net.units = aoff
        self.net.maxw = maxw
        self.net.phi = &self.phi_buf[0]
        th = np.asarray(theta, dtype=np.float64)
        self.phys.k1 = th[0]
        self.phys.k2 = th[1]
        self.phys.k3 = th[2]
        self.phys.k4 = th[3]
        self.phys.k5 = th[4]
        self.phys.kind = kind


def simulate(theta, phi, x0, u, double h, sizes, int kind):
    cdef _Setup s = _Setup(theta, phi, sizes, kind)
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t n = uv.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n + 1, 3))
    cdef double[:, ::1] states = out
    cdef double[::1] acts = np.empty(max(s.net.units, 1))
    cdef double x[3]
    cdef double st[3]
    cdef double k[4][3]
    cdef Py_ssize_t i
    cdef int j
    cdef int bad = -1
    cdef double ui
    x0 = np.asarray(x0, dtype=np.float64)
    for j in range(3):
        x[j] = x0[j]
        states[0, j] = x[j]
    with nogil:
        for i in range(n):
            ui = uv[i]
            dyn(&s.phys, &s.net, x, ui, &acts[0], k[0])
            for j in range(3):
                st[j] = x[j] + 0.5 * h * k[0][j]
            dyn(&s.phys, &s.net, st, ui, &acts[0], k[1])
            for j in range(3):
                st[j] = x[j] + 0.5 * h * k[1][j]
            dyn(&s.phys, &s.net, st, ui, &acts[0], k[2])
            for j in range(3):
                st[j] = x[j] + h * k[2][j]
            dyn(&s.phys, &s.net, st, ui, &acts[0], k[3])
            for j in range(3):
                x[j] = x[j] + (h / 6.0) * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j])
            if not (isfinite(x[0]) and isfinite(x[1]) and isfinite(x[2])):
                bad = <int>i
                break
            for j in range(3):
                states[i + 1, j] = x[j]
    if bad >= 0:
        return out[: bad + 1].copy(), bad
    return out, -1


def rollout_loss_grad(theta, phi, x0, u, y, w, double h, sizes, int kind, double lam,
                      bint want_grad=True):
    cdef _Setup s = _Setup(theta, phi, sizes, kind)
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t l = yv.shape[0]
    cdef double w0 = w[0]
    cdef double w1 = w[1]
    cdef bint penalty = lam > 0.0 and kind != 0
    cdef int U = max(s.net.units, 1)
    cdef int P = s.phi_buf.shape[0]
    cdef int n_phi = np.shape(phi)[0]

    cdef double[:, ::1] xs = np.empty((l + 1, 3))
    cdef double[:, :, ::1] stages = np.empty((max(l, 1), NSTAGE, 3))
    cdef double[:, :, ::1] acts = np.empty((max(l, 1), NSLOT, U))
    cdef double[::1] pval = np.zeros(max(l, 1))
    cdef double[::1] prl = np.zeros(max(l, 1))

    cdef double x[3]
    cdef double xn[3]
    cdef double k[4][3]
    cdef double r[3]
    cdef double e0, e1, loss = 0.0, un, pw, c
    cdef Py_ssize_t n
    cdef int j, st

    cdef cnp.ndarray[cnp.float64_t, ndim=1] gtheta_a = np.zeros(5)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gphi_a = np.zeros(P)
    cdef double[::1] gtheta = gtheta_a
    cdef double[::1] gphi = gphi_a
    cdef double[::1] dbuf = np.zeros(max(s.net.maxw, 3))
    cdef double[::1] tbuf = np.zeros(max(s.net.maxw, 3))
    cdef double a[3]
    cdef double ax[3]
    cdef double ak[4][3]
    cdef double gs[3]
    cdef double v[3]
    cdef double gx[3]
    cdef int bad = -1

    x0 = np.asarray(x0, dtype=np.float64)
    if uv.shape[0] < l + (1 if penalty else 0):
        raise ValueError("input sequence too short for the window")
    for j in range(3):
        x[j] = x0[j]
        xs[0, j] = x[j]

    with nogil:
        for n in range(l):
            un = uv[n]
            for j in range(3):
                stages[n, 0, j] = x[j]
            dyn(&s.phys, &s.net, &stages[n, 0, 0], un, &acts[n, 0, 0], k[0])
            for j in range(3):
                stages[n, 1, j] = x[j] + 0.5 * h * k[0][j]
            dyn(&s.phys, &s.net, &stages[n, 1, 0], un, &acts[n, 1, 0], k[1])
            for j in range(3):
                stages[n, 2, j] = x[j] + 0.5 * h * k[1][j]
            dyn(&s.phys, &s.net, &stages[n, 2, 0], un, &acts[n, 2, 0], k[2])
            for j in range(3):
                stages[n, 3, j] = x[j] + h * k[2][j]
            dyn(&s.phys, &s.net, &stages[n, 3, 0], un, &acts[n, 3, 0], k[3])
            for j in range(3):
                xn[j] = x[j] + (h / 6.0) * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j])
            if not (isfinite(xn[0]) and isfinite(xn[1]) and isfinite(xn[2])):
                bad = <int>n
                break
            for j in range(3):
                x[j] = xn[j]
                xs[n + 1, j] = x[j]
            e0 = x[0] - yv[n, 0]
            e1 = x[1] - yv[n, 1]
            loss += w0 * e0 * e0 + w1 * e1 * e1
            if penalty:
                residual(&s.phys, &s.net, x, uv[n + 1], &acts[n, 4, 0], r)
                pw = x[2] * r[2]
                pval[n] = pw
                prl[n] = r[2]
                if pw > 0.0:
                    loss += lam * pw

    if bad >= 0:
        return float("inf"), None, None, None, bad, np.array([xs[bad, 0], xs[bad, 1], xs[bad, 2]])
    if not want_grad:
        return loss, None, None, None, -1, None

    c = h / 6.0
    with nogil:
        for j in range(3):
            a[j] = 0.0
        for n in range(l - 1, -1, -1):
            a[0] += 2.0 * w0 * (xs[n + 1, 0] - yv[n, 0])
            a[1] += 2.0 * w1 * (xs[n + 1, 1] - yv[n, 1])
            if penalty and pval[n] > 0.0:
                a[2] += lam * prl[n]
                v[0] = 0.0
                v[1] = 0.0
                v[2] = lam * xs[n + 1, 2]
                gx[0] = 0.0
                gx[1] = 0.0
                gx[2] = 0.0
                residual_vjp(&s.phys, &s.net, &xs[n + 1, 0], &acts[n, 4, 0], v, gx,
                             &dbuf[0], &tbuf[0], &gphi[0])
                for j in range(3):
                    a[j] += gx[j]
            un = uv[n]
            for j in range(3):
                ak[0][j] = c * a[j]
                ak[1][j] = 2.0 * c * a[j]
                ak[2][j] = 2.0 * c * a[j]
                ak[3][j] = c * a[j]
                ax[j] = a[j]
            for st in range(NSTAGE - 1, -1, -1):
                dyn_vjp(&s.phys, &s.net, &stages[n, st, 0], un, &acts[n, st, 0], ak[st], gs,
                        &gtheta[0], &dbuf[0], &tbuf[0], &gphi[0])
                for j in range(3):
                    ax[j] += gs[j]
                if st == 3:
                    for j in range(3):
                        ak[2][j] += h * gs[j]
                elif st >= 1:
                    for j in range(3):
                        ak[st - 1][j] += 0.5 * h * gs[j]
            for j in range(3):
                a[j] = ax[j]
    return loss, gtheta_a, gphi_a[:n_phi].copy(), np.array([a[0], a[1], a[2]]), -1, None
