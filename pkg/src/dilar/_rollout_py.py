"""Pure-Python rollout kernel (fallback for the compiled ``_rollout`` module).

Computes the windowed rollout loss of the helicopter model with one of the
residual kinds below and its exact gradient by the discrete adjoint of RK4
(backpropagation through the recurrence). The compiled module implements the
same algorithm and must agree with this one to rounding.

Residual kinds:
    0  none
    1  full-state additive network output (UDE)
    2  latent additive network output (soft)
    3  latent ``-softplus(o)^2 * alpha_dot`` (dissipative, one latent state)

Return convention of :func:`rollout_loss_grad`:
``(loss, g_theta, g_phi, g_x0, bad_step, last_state)``; ``bad_step`` is -1 on
success, otherwise the index of the step that produced a non-finite state and
``last_state`` the state before it.
"""

import math

import numpy as np

NSTAGE = 4


def _softplus(o):
    return max(o, 0.0) + math.log1p(math.exp(-abs(o)))


def _sigmoid(o):
    if o >= 0:
        return 1.0 / (1.0 + math.exp(-o))
    e = math.exp(o)
    return e / (1.0 + e)


def _layers(phi, sizes):
    layers, off = [], 0
    for k in range(len(sizes) - 1):
        fi, fo = sizes[k], sizes[k + 1]
        W = phi[off:off + fi * fo].reshape(fo, fi)
        off += fi * fo
        b = phi[off:off + fo]
        off += fo
        layers.append((W, b))
    return layers


def _grad_views(gphi, sizes):
    return _layers(gphi, sizes)


def _mlp_fwd(layers, z):
    acts = [z]
    h = z
    last = len(layers) - 1
    for k, (W, b) in enumerate(layers):
        a = W @ h + b
        h = np.tanh(a) if k < last else a
        acts.append(h)
    return acts


def _mlp_bwd(layers, acts, d, glayers):
    last = len(layers) - 1
    for k in range(last, -1, -1):
        W, _ = layers[k]
        gW, gb = glayers[k]
        if k < last:
            h = acts[k + 1]
            d = d * (1.0 - h * h)
        gW += np.outer(d, acts[k])
        gb += d
        d = W.T @ d
    return d


class _Model:
    def __init__(self, theta, phi, sizes, kind):
        self.k1, self.k2, self.k3, self.k4, self.k5 = (float(v) for v in theta)
        self.kind = int(kind)
        self.sizes = tuple(int(s) for s in sizes)
        self.layers = _layers(np.asarray(phi, dtype=float), self.sizes) if self.kind else []

    def residual(self, x, u):
        acts = _mlp_fwd(self.layers, np.array([x[0], x[1], x[2], u]))
        o = acts[-1]
        if self.kind == 1:
            r = o.copy()
        elif self.kind == 2:
            r = np.array([0.0, 0.0, o[0]])
        else:
            sp = _softplus(o[0])
            r = np.array([0.0, 0.0, -sp * sp * x[2]])
        return r, acts

    def residual_vjp(self, x, acts, v, gx, glayers):
        o = acts[-1]
        if self.kind == 1:
            d_o = v.copy()
        elif self.kind == 2:
            d_o = np.array([v[2]])
        else:
            sp = _softplus(o[0])
            sg = _sigmoid(o[0])
            d_o = np.array([v[2] * (-2.0 * sp * sg * x[2])])
            gx[2] += v[2] * (-sp * sp)
        dz = _mlp_bwd(self.layers, acts, d_o, glayers)
        gx += dz[:3]

    def f(self, x, u):
        w, a, ad = x
        fp = np.array([
            self.k2 * w + self.k3 * w * w + self.k1 * u,
            ad,
            self.k4 * w * w - self.k5 * math.sin(a),
        ])
        if not self.kind:
            return fp, None
        r, acts = self.residual(x, u)
        return fp + r, acts

    def f_vjp(self, x, u, acts, v, gtheta, glayers):
        w, a, _ = x
        gx = np.array([
            v[0] * (self.k2 + 2.0 * self.k3 * w) + v[2] * (2.0 * self.k4 * w),
            -v[2] * self.k5 * math.cos(a),
            v[1],
        ])
        gtheta[0] += v[0] * u
        gtheta[1] += v[0] * w
        gtheta[2] += v[0] * w * w
        gtheta[3] += v[2] * w * w
        gtheta[4] -= v[2] * math.sin(a)
        if self.kind:
            self.residual_vjp(x, acts, v, gx, glayers)
        return gx


def _finite(x):
    return math.isfinite(x[0]) and math.isfinite(x[1]) and math.isfinite(x[2])


@np.errstate(over="ignore", invalid="ignore")
def simulate(theta, phi, x0, u, h, sizes, kind):
    """Roll the model over ``len(u)`` steps; returns ``(states, bad_step)``."""
    m = _Model(theta, phi, sizes, kind)
    u = np.asarray(u, dtype=float)
    n = len(u)
    states = np.empty((n + 1, 3))
    x = np.array(x0, dtype=float)
    states[0] = x
    for i in range(n):
        ui = float(u[i])
        k1, _ = m.f(x, ui)
        k2, _ = m.f(x + 0.5 * h * k1, ui)
        k3, _ = m.f(x + 0.5 * h * k2, ui)
        k4, _ = m.f(x + h * k3, ui)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not _finite(x):
            return states[: i + 1].copy(), i
        states[i + 1] = x
    return states, -1


# overflow is detected by the finiteness check after each step
@np.errstate(over="ignore", invalid="ignore")
def rollout_loss_grad(theta, phi, x0, u, y, w, h, sizes, kind, lam, want_grad=True):
    m = _Model(theta, phi, sizes, kind)
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    w0, w1 = float(w[0]), float(w[1])
    lam = float(lam)
    l = y.shape[0]
    penalty = lam > 0.0 and m.kind != 0

    xs = np.empty((l + 1, 3))
    stages = np.empty((l, NSTAGE, 3))
    caches = [[None] * NSTAGE for _ in range(l)]
    pcaches = [None] * l
    x = np.array(x0, dtype=float)
    xs[0] = x
    loss = 0.0
    for n in range(l):
        un = float(u[n])
        s = x
        ks = []
        for st in range(NSTAGE):
            if st == 1 or st == 2:
                s = x + 0.5 * h * ks[-1]
            elif st == 3:
                s = x + h * ks[-1]
            stages[n, st] = s
            k, acts = m.f(s, un)
            caches[n][st] = acts
            ks.append(k)
        x_new = x + (h / 6.0) * (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3])
        if not _finite(x_new):
            return math.inf, None, None, None, n, x.copy()
        x = x_new
        xs[n + 1] = x
        e0 = x[0] - y[n, 0]
        e1 = x[1] - y[n, 1]
        loss += w0 * e0 * e0 + w1 * e1 * e1
        if penalty:
            r, acts = m.residual(x, float(u[n + 1]))
            p = x[2] * r[2]
            pcaches[n] = (r, acts, p)
            if p > 0.0:
                loss += lam * p

    if not want_grad:
        return loss, None, None, None, -1, None

    gtheta = np.zeros(5)
    gphi = np.zeros(len(phi))
    glayers = _grad_views(gphi, m.sizes) if m.kind else []
    a = np.zeros(3)
    c = h / 6.0
    for n in range(l - 1, -1, -1):
        xn1 = xs[n + 1]
        a[0] += 2.0 * w0 * (xn1[0] - y[n, 0])
        a[1] += 2.0 * w1 * (xn1[1] - y[n, 1])
        if penalty:
            r, acts, p = pcaches[n]
            if p > 0.0:
                a[2] += lam * r[2]
                v = np.array([0.0, 0.0, lam * xn1[2]])
                gx = np.zeros(3)
                m.residual_vjp(xn1, acts, v, gx, glayers)
                a += gx
        un = float(u[n])
        ak = [c * a, 2.0 * c * a, 2.0 * c * a, c * a]
        ax = a.copy()
        for st in range(NSTAGE - 1, -1, -1):
            gs = m.f_vjp(stages[n, st], un, caches[n][st], ak[st], gtheta, glayers)
            ax += gs
            if st == 3:
                ak[2] = ak[2] + h * gs
            elif st >= 1:
                ak[st - 1] = ak[st - 1] + 0.5 * h * gs
        a = ax
    return loss, gtheta, gphi, a, -1, None
