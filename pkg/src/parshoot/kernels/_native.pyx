# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled propagation engine.

Mirrors the pure-Python engine step for step: the same control-elimination
iteration (exact affine v-solve plus a Schur-complement Newton step on u),
the same chord Newton implicit Euler with a finite-difference Jacobian that
is refreshed only on slow inner solves, and the same RK4 rule.  Built-in
dynamics evaluate in C; user problems go through Python callbacks and still
skip all per-operation numpy overhead in the stepping loops.
"""

from libc.math cimport fabs
from libc.string cimport memcpy, memset

import numpy as np


class NativeStepError(Exception):
    """Propagation failure inside the compiled loop."""

    def __init__(self, message, step_index=None, time=None):
        super().__init__(message)
        self.step_index = step_index
        self.time = time


# ---------------------------------------------------------------------------
# Small dense linear algebra (row-major, partial pivoting)
# ---------------------------------------------------------------------------

cdef int _lu_factor(double* a, int* piv, int n) nogil:
    cdef int i, j, k, imax
    cdef double amax, tmp
    for k in range(n):
        imax = k
        amax = fabs(a[k * n + k])
        for i in range(k + 1, n):
            if fabs(a[i * n + k]) > amax:
                amax = fabs(a[i * n + k])
                imax = i
        if amax < 1e-300:
            return -1
        piv[k] = imax
        if imax != k:
            for j in range(n):
                tmp = a[k * n + j]
                a[k * n + j] = a[imax * n + j]
                a[imax * n + j] = tmp
        for i in range(k + 1, n):
            a[i * n + k] /= a[k * n + k]
            for j in range(k + 1, n):
                a[i * n + j] -= a[i * n + k] * a[k * n + j]
    return 0


cdef void _lu_solve(double* a, int* piv, double* b, int n) nogil:
    cdef int i, j
    cdef double tmp
    for i in range(n):
        if piv[i] != i:
            tmp = b[i]
            b[i] = b[piv[i]]
            b[piv[i]] = tmp
    for i in range(n):
        for j in range(i):
            b[i] -= a[i * n + j] * b[j]
    for i in range(n - 1, -1, -1):
        for j in range(i + 1, n):
            b[i] -= a[i * n + j] * b[j]
        b[i] /= a[i * n + i]


# ---------------------------------------------------------------------------
# Field tensors
# ---------------------------------------------------------------------------

cdef class Tensors:
    cdef double[:, ::1] f
    cdef double[:, :, ::1] dxf
    cdef double[:, :, ::1] duf
    cdef double[:, :, :, ::1] dxxf
    cdef double[:, :, :, ::1] dxuf
    cdef double[:, :, :, ::1] duuf
    # drift brackets g_i = [f_0, f_i]^x and their (x, u) derivatives
    cdef double[:, ::1] g
    cdef double[:, :, ::1] dxg
    cdef double[:, :, ::1] dug

    def __cinit__(self, int n, int l, int m):
        cdef int m1 = m + 1
        self.f = np.zeros((m1, n))
        self.dxf = np.zeros((m1, n, n))
        self.duf = np.zeros((m1, n, max(l, 1)))[:, :, :l]
        self.dxxf = np.zeros((m1, n, n, n))
        self.dxuf = np.zeros((m1, n, n, max(l, 1)))[:, :, :, :l]
        self.duuf = np.zeros((m1, n, max(l, 1), max(l, 1)))[:, :, :l, :l]
        self.g = np.zeros((max(m, 1), n))[:m, :]
        self.dxg = np.zeros((max(m, 1), n, n))[:m, :, :]
        self.dug = np.zeros((max(m, 1), n, max(l, 1)))[:m, :, :l]


cdef class FieldKernel:
    """Fills a Tensors workspace at one (x, u)."""

    cdef public int n, l, m

    cdef int eval(self, double[::1] x, double[::1] u, Tensors t) except -1:
        raise NotImplementedError

    cdef void brackets(self, Tensors t):
        # g_i = (Dx f_i) f_0 - (Dx f_0) f_i, with first derivatives chained
        # through the second-derivative tensors.
        cdef int n = self.n, l = self.l, m = self.m
        cdef int i, a, b, c, d
        cdef double acc
        for i in range(m):
            for a in range(n):
                acc = 0.0
                for b in range(n):
                    acc += t.dxf[i + 1, a, b] * t.f[0, b] - t.dxf[0, a, b] * t.f[i + 1, b]
                t.g[i, a] = acc
            for a in range(n):
                for c in range(n):
                    acc = 0.0
                    for b in range(n):
                        acc += (t.dxxf[i + 1, a, b, c] * t.f[0, b]
                                + t.dxf[i + 1, a, b] * t.dxf[0, b, c]
                                - t.dxxf[0, a, b, c] * t.f[i + 1, b]
                                - t.dxf[0, a, b] * t.dxf[i + 1, b, c])
                    t.dxg[i, a, c] = acc
                for d in range(l):
                    acc = 0.0
                    for b in range(n):
                        acc += (t.dxuf[i + 1, a, b, d] * t.f[0, b]
                                + t.dxf[i + 1, a, b] * t.duf[0, b, d]
                                - t.dxuf[0, a, b, d] * t.f[i + 1, b]
                                - t.dxf[0, a, b] * t.duf[i + 1, b, d])
                    t.dug[i, a, d] = acc


cdef class DSFieldKernel(FieldKernel):
    """Hard-coded tensors of the built-in three-state benchmark."""

    def __cinit__(self):
        self.n = 3
        self.l = 1
        self.m = 1

    cdef int eval(self, double[::1] x, double[::1] u, Tensors t) except -1:
        # f0 = (x2 + u, 0, x1^2 + x2^2 + u^2), f1 = (0, 1, 10 x2)
        t.f[0, 0] = x[1] + u[0]
        t.f[0, 1] = 0.0
        t.f[0, 2] = x[0] * x[0] + x[1] * x[1] + u[0] * u[0]
        t.f[1, 0] = 0.0
        t.f[1, 1] = 1.0
        t.f[1, 2] = 10.0 * x[1]

        memset(&t.dxf[0, 0, 0], 0, 2 * 9 * sizeof(double))
        t.dxf[0, 0, 1] = 1.0
        t.dxf[0, 2, 0] = 2.0 * x[0]
        t.dxf[0, 2, 1] = 2.0 * x[1]
        t.dxf[1, 2, 1] = 10.0

        memset(&t.duf[0, 0, 0], 0, 2 * 3 * sizeof(double))
        t.duf[0, 0, 0] = 1.0
        t.duf[0, 2, 0] = 2.0 * u[0]

        memset(&t.dxxf[0, 0, 0, 0], 0, 2 * 27 * sizeof(double))
        t.dxxf[0, 2, 0, 0] = 2.0
        t.dxxf[0, 2, 1, 1] = 2.0

        memset(&t.dxuf[0, 0, 0, 0], 0, 2 * 9 * sizeof(double))

        memset(&t.duuf[0, 0, 0, 0], 0, 2 * 3 * sizeof(double))
        t.duuf[0, 2, 0, 0] = 2.0
        return 0


cdef class CallbackFieldKernel(FieldKernel):
    """Tensor evaluation through Python callables (user problems)."""

    cdef list values, dxs, dus, dxxs, dxus, duus

    def __init__(self, int n, int l, int m, values, dxs, dus, dxxs, dxus, duus):
        self.n = n
        self.l = l
        self.m = m
        self.values = list(values)
        self.dxs = list(dxs)
        self.dus = list(dus)
        self.dxxs = list(dxxs)
        self.dxus = list(dxus)
        self.duus = list(duus)

    cdef int eval(self, double[::1] x, double[::1] u, Tensors t) except -1:
        cdef int i
        xa = np.asarray(x)
        ua = np.asarray(u)
        for i in range(self.m + 1):
            t.f.base[i, :] = self.values[i](xa, ua)
            t.dxf.base[i, :, :] = self.dxs[i](xa, ua)
            t.dxxf.base[i, :, :, :] = self.dxxs[i](xa, ua)
            if self.l > 0:
                t.duf.base[i, :, : self.l] = self.dus[i](xa, ua)
                t.dxuf.base[i, :, :, : self.l] = self.dxus[i](xa, ua)
                t.duuf.base[i, :, : self.l, : self.l] = self.duus[i](xa, ua)
        return 0


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

cdef class Engine:
    cdef FieldKernel K
    cdef int n, l, m, nz, lm
    cdef Tensors T       # tensors at the current elimination iterate
    cdef Tensors Tp      # scratch for u-perturbed tensors
    cdef double[::1] u, v, vw, hu, c0, hv1, hv2, dv, gamma, grhs
    cdef double[:, ::1] amat, jac, huu
    cdef double[::1] ujac_step
    cdef int[::1] piv_m, piv_l, piv_lm, piv_z
    cdef double[::1] z, zc, zmid, f0, fz, psi, delta
    cdef double[::1] rk1, rk2, rk3, rk4buf
    cdef double[:, ::1] jz, mz
    cdef double elim_tol
    cdef int elim_maxit

    def __cinit__(self, FieldKernel kernel):
        cdef int n = kernel.n, l = kernel.l, m = kernel.m
        self.K = kernel
        self.n = n
        self.l = l
        self.m = m
        self.nz = 2 * n
        self.lm = l + m
        self.T = Tensors(n, l, m)
        self.Tp = Tensors(n, l, m)
        self.u = np.zeros(max(l, 1))[:l]
        self.v = np.zeros(max(m, 1))[:m]
        self.vw = np.zeros(max(m, 1))[:m]
        self.hu = np.zeros(max(l, 1))[:l]
        self.c0 = np.zeros(max(m, 1))[:m]
        self.hv1 = np.zeros(max(m, 1))[:m]
        self.hv2 = np.zeros(max(m, 1))[:m]
        self.dv = np.zeros(max(m, 1))[:m]
        self.gamma = np.zeros(max(l, 1))[:l]
        self.grhs = np.zeros(max(l, 1))[:l]
        self.amat = np.zeros((max(m, 1), max(m, 1)))[:m, :m]
        self.jac = np.zeros((max(self.lm, 1), max(self.lm, 1)))[: self.lm, : self.lm]
        self.huu = np.zeros((max(l, 1), max(l, 1)))[:l, :l]
        self.ujac_step = np.zeros(max(l, 1))[:l]
        self.piv_m = np.zeros(max(m, 1), dtype=np.intc)[:m]
        self.piv_l = np.zeros(max(l, 1), dtype=np.intc)[:l]
        self.piv_lm = np.zeros(max(self.lm, 1), dtype=np.intc)[: self.lm]
        self.piv_z = np.zeros(self.nz, dtype=np.intc)
        self.z = np.zeros(self.nz)
        self.zc = np.zeros(self.nz)
        self.zmid = np.zeros(self.nz)
        self.f0 = np.zeros(self.nz)
        self.fz = np.zeros(self.nz)
        self.psi = np.zeros(self.nz)
        self.delta = np.zeros(self.nz)
        self.rk1 = np.zeros(self.nz)
        self.rk2 = np.zeros(self.nz)
        self.rk3 = np.zeros(self.nz)
        self.rk4buf = np.zeros(self.nz)
        self.jz = np.zeros((self.nz, self.nz))
        self.mz = np.zeros((self.nz, self.nz))

    # -- Hamiltonian pieces at the current tensors ---------------------------

    cdef int _gamma(self, Tensors t, double[::1] p, double[::1] v, double[::1] out) except -1:
        """udot feedback: solve Huu gamma = Hx Fu - p (Fxu : F)."""
        cdef int n = self.n, l = self.l, m = self.m
        cdef int a, b, c, d, i
        cdef double acc, vf
        if l == 0:
            return 0
        # Huu[c,d] = sum_a p_a sum_i vf_i duuf[i,a,c,d]
        for c in range(l):
            for d in range(l):
                acc = 0.0
                for a in range(n):
                    vf = t.duuf[0, a, c, d]
                    for i in range(m):
                        vf += v[i] * t.duuf[i + 1, a, c, d]
                    acc += p[a] * vf
                self.huu[c, d] = acc
        # rhs_c = -sum_b Hx_b Fu[b,c] + sum_a p_a sum_b Fxu[a,b,c] F_b
        cdef double hxb, fub, fxu, fb
        for c in range(l):
            acc = 0.0
            for b in range(n):
                # Hx_b = sum_a p_a Fx[a,b]
                hxb = 0.0
                for a in range(n):
                    vf = t.dxf[0, a, b]
                    for i in range(m):
                        vf += v[i] * t.dxf[i + 1, a, b]
                    hxb += p[a] * vf
                fub = t.duf[0, b, c]
                for i in range(m):
                    fub += v[i] * t.duf[i + 1, b, c]
                acc -= hxb * fub
            for a in range(n):
                for b in range(n):
                    fxu = t.dxuf[0, a, b, c]
                    fb = t.f[0, b]
                    for i in range(m):
                        fxu += v[i] * t.dxuf[i + 1, a, b, c]
                        fb += v[i] * t.f[i + 1, b]
                    acc += p[a] * fxu * fb
            self.grhs[c] = -acc
        cdef double[:, ::1] huu = self.huu
        cdef double scale = 0.0
        for c in range(l):
            for d in range(l):
                if fabs(huu[c, d]) > scale:
                    scale = fabs(huu[c, d])
        if _lu_factor(&huu[0, 0], &self.piv_l[0], l) != 0:
            raise NativeStepError("H_uu singular while eliminating udot")
        # grhs already carries the negated right-hand side, so the solve
        # lands directly on the feedback value
        memcpy(&out[0], &self.grhs[0], l * sizeof(double))
        _lu_solve(&huu[0, 0], &self.piv_l[0], &out[0], l)
        return 0

    cdef int _hv_ddot(self, Tensors t, double[::1] p, double[::1] v, double[::1] out) except -1:
        cdef int n = self.n, l = self.l, m = self.m
        cdef int i, a, b, c, d
        cdef double acc, vf, hxb, fc
        if m == 0:
            return 0
        if l > 0:
            self._gamma(t, p, v, self.gamma)
        for i in range(m):
            acc = 0.0
            for b in range(n):
                hxb = 0.0
                for a in range(n):
                    vf = t.dxf[0, a, b]
                    for c in range(m):
                        vf += v[c] * t.dxf[c + 1, a, b]
                    hxb += p[a] * vf
                acc -= t.g[i, b] * hxb
            for a in range(n):
                for c in range(n):
                    fc = t.f[0, c]
                    for b in range(m):
                        fc += v[b] * t.f[b + 1, c]
                    acc += p[a] * t.dxg[i, a, c] * fc
                for d in range(l):
                    acc += p[a] * t.dug[i, a, d] * self.gamma[d]
            out[i] = acc
        return 0

    cdef int _eval_tensors(self, double[::1] x, double[::1] u, Tensors t) except -1:
        self.K.eval(x, u, t)
        self.K.brackets(t)
        return 0

    cdef int _eliminate(self, double[::1] x, double[::1] p,
                        double* out_resid, int* out_iters) except -1:
        """Solve (H_u, Hddot_v) = 0 for (self.u, self.v), warm in place."""
        cdef int n = self.n, l = self.l, m = self.m, lm = self.lm
        cdef int it, i, j, a, b, c
        cdef double resid, acc, vf, step
        cdef double fd = 1e-6

        for it in range(1, self.elim_maxit + 1):
            self._eval_tensors(x, self.u, self.T)
            if m > 0:
                # local affine model of hv_ddot around current v
                self._hv_ddot(self.T, p, self.v, self.c0)
                for j in range(m):
                    memcpy(&self.vw[0], &self.v[0], m * sizeof(double))
                    self.vw[j] += 1.0
                    self._hv_ddot(self.T, p, self.vw, self.hv1)
                    for i in range(m):
                        self.amat[i, j] = self.hv1[i] - self.c0[i]
                if _lu_factor(&self.amat[0, 0], &self.piv_m[0], m) != 0:
                    raise NativeStepError("v-block of the elimination Jacobian is singular")
                for i in range(m):
                    self.dv[i] = -self.c0[i]
                _lu_solve(&self.amat[0, 0], &self.piv_m[0], &self.dv[0], m)
                for i in range(m):
                    self.v[i] += self.dv[i]
                self._hv_ddot(self.T, p, self.v, self.hv2)
            # H_u = p . F_u at the updated v
            for c in range(l):
                acc = 0.0
                for a in range(n):
                    vf = self.T.duf[0, a, c]
                    for i in range(m):
                        vf += self.v[i] * self.T.duf[i + 1, a, c]
                    acc += p[a] * vf
                self.hu[c] = acc
            resid = 0.0
            for c in range(l):
                if fabs(self.hu[c]) > resid:
                    resid = fabs(self.hu[c])
            for i in range(m):
                if fabs(self.hv2[i]) > resid:
                    resid = fabs(self.hv2[i])
            if resid <= self.elim_tol:
                out_resid[0] = resid
                out_iters[0] = it
                return 0
            # elimination Jacobian: analytic upper blocks, FD lower blocks
            for c in range(l):
                for j in range(l):
                    acc = 0.0
                    for a in range(n):
                        vf = self.T.duuf[0, a, c, j]
                        for i in range(m):
                            vf += self.v[i] * self.T.duuf[i + 1, a, c, j]
                        acc += p[a] * vf
                    self.jac[c, j] = acc
                for i in range(m):
                    acc = 0.0
                    for a in range(n):
                        acc += p[a] * self.T.duf[i + 1, a, c]
                    self.jac[c, l + i] = acc
            for c in range(l):
                # column d(-hv_ddot)/du_c by central differences, fresh tensors
                memcpy(&self.ujac_step[0], &self.u[0], l * sizeof(double))
                self.ujac_step[c] = self.u[c] + fd
                self._eval_tensors(x, self.ujac_step, self.Tp)
                self._hv_ddot(self.Tp, p, self.v, self.hv1)
                self.ujac_step[c] = self.u[c] - fd
                self._eval_tensors(x, self.ujac_step, self.Tp)
                self._hv_ddot(self.Tp, p, self.v, self.c0)
                for i in range(m):
                    self.jac[l + i, c] = -(self.hv1[i] - self.c0[i]) / (2.0 * fd)
            for j in range(m):
                memcpy(&self.vw[0], &self.v[0], m * sizeof(double))
                self.vw[j] = self.v[j] + fd
                self._hv_ddot(self.T, p, self.vw, self.hv1)
                self.vw[j] = self.v[j] - fd
                self._hv_ddot(self.T, p, self.vw, self.c0)
                for i in range(m):
                    self.jac[l + i, l + j] = -(self.hv1[i] - self.c0[i]) / (2.0 * fd)
            if l > 0:
                # Schur complement step on u: (Huu - Huv Avv^-1 Avu) du = -hu
                # where Avv = jac[l:, l:], Avu = jac[l:, :l].
                if m > 0:
                    for i in range(m):
                        for j in range(m):
                            self.amat[i, j] = self.jac[l + i, l + j]
                    if _lu_factor(&self.amat[0, 0], &self.piv_m[0], m) != 0:
                        raise NativeStepError("elimination Jacobian numerically singular")
                    for c in range(l):
                        for i in range(m):
                            self.dv[i] = self.jac[l + i, c]
                        _lu_solve(&self.amat[0, 0], &self.piv_m[0], &self.dv[0], m)
                        for j in range(l):
                            acc = 0.0
                            for i in range(m):
                                acc += self.jac[j, l + i] * self.dv[i]
                            self.huu[j, c] = self.jac[j, c] - acc
                else:
                    for j in range(l):
                        for c in range(l):
                            self.huu[j, c] = self.jac[j, c]
                if _lu_factor(&self.huu[0, 0], &self.piv_l[0], l) != 0:
                    raise NativeStepError("elimination Jacobian numerically singular")
                memcpy(&self.grhs[0], &self.hu[0], l * sizeof(double))
                _lu_solve(&self.huu[0, 0], &self.piv_l[0], &self.grhs[0], l)
                for c in range(l):
                    self.u[c] -= self.grhs[c]
        raise NativeStepError(
            "control elimination did not converge in %d iterations" % self.elim_maxit
        )

    cdef int _rhs(self, double[::1] z, double[::1] out) except -1:
        """Reduced right-hand side at z = (x, p); controls warm in the engine."""
        cdef int n = self.n, m = self.m
        cdef int a, b, i
        cdef double resid, acc, vf
        cdef int iters
        cdef double[::1] x = z[:n]
        cdef double[::1] p = z[n:]
        self._eliminate(x, p, &resid, &iters)
        for a in range(n):
            acc = self.T.f[0, a]
            for i in range(m):
                acc += self.v[i] * self.T.f[i + 1, a]
            out[a] = acc
        for b in range(n):
            acc = 0.0
            for a in range(n):
                vf = self.T.dxf[0, a, b]
                for i in range(m):
                    vf += self.v[i] * self.T.dxf[i + 1, a, b]
                acc += p[a] * vf
            out[n + b] = -acc
        return 0

    cdef int _fd_jacobian(self, double[::1] z, double[::1] f0) except -1:
        """Forward-difference Jacobian of _rhs into self.jz."""
        cdef int nz = self.nz
        cdef int j, i
        cdef double step, zj
        for j in range(nz):
            step = 1e-6
            if fabs(z[j]) > 1.0:
                step = 1e-6 * fabs(z[j])
            zj = z[j]
            z[j] = zj + step
            self._rhs(z, self.fz)
            z[j] = zj
            for i in range(nz):
                self.jz[i, j] = (self.fz[i] - f0[i]) / step
        return 0

    cdef int _factor_iteration_matrix(self, double h) except -1:
        """LU of (I - h J) into self.mz."""
        cdef int nz = self.nz
        cdef int i, j
        for i in range(nz):
            for j in range(nz):
                self.mz[i, j] = (1.0 if i == j else 0.0) - h * self.jz[i, j]
        if _lu_factor(&self.mz[0, 0], &self.piv_z[0], nz) != 0:
            raise NativeStepError("implicit iteration matrix singular")
        return 0

    def propagate(self, double[::1] x0, double[::1] p0, double horizon, int grid_n,
                  scheme, double newton_tol, int newton_max_iter,
                  double elim_tol, int elim_max_iter):
        cdef int n = self.n, nz = self.nz
        cdef int N = grid_n
        cdef double h = horizon / N
        cdef int k, it, i
        cdef bint refreshed, converged, have_lu = False
        cdef double dmax, resid
        cdef int iters
        cdef bint rk4 = (scheme == "rk4")
        if not rk4 and scheme != "implicit-euler":
            raise ValueError("unknown scheme %r" % (scheme,))

        self.elim_tol = elim_tol
        self.elim_maxit = elim_max_iter

        t_arr = np.linspace(0.0, horizon, N + 1)
        x_arr = np.zeros((N + 1, n))
        p_arr = np.zeros((N + 1, n))
        u_arr = np.zeros((N + 1, self.l))
        v_arr = np.zeros((N + 1, self.m))
        cdef double[:, ::1] xv = x_arr
        cdef double[:, ::1] pv = p_arr
        cdef double[:, ::1] uv = u_arr[:, : self.l]
        cdef double[:, ::1] vv = v_arr[:, : self.m]

        cdef double[::1] z = self.z
        cdef double[::1] zc = self.zc
        memcpy(&z[0], &x0[0], n * sizeof(double))
        memcpy(&z[n], &p0[0], n * sizeof(double))
        for i in range(self.l):
            self.u[i] = 0.0
        for i in range(self.m):
            self.v[i] = 0.0

        cdef int step_index = 0
        try:
            self._store(0, z, xv, pv, uv, vv)
            if rk4:
                for k in range(N):
                    step_index = k
                    self._rk4_step(z, h, self.rk1, self.rk2, self.rk3, self.rk4buf)
                    self._store(k + 1, z, xv, pv, uv, vv)
            else:
                for k in range(N):
                    step_index = k
                    memcpy(&zc[0], &z[0], nz * sizeof(double))
                    refreshed = False
                    if not have_lu:
                        self._rhs(zc, self.f0)
                        self._fd_jacobian(zc, self.f0)
                        self._factor_iteration_matrix(h)
                        have_lu = True
                    converged = False
                    for it in range(newton_max_iter):
                        self._rhs(zc, self.fz)
                        dmax = 0.0
                        for i in range(nz):
                            self.psi[i] = -(zc[i] - z[i] - h * self.fz[i])
                        _lu_solve(&self.mz[0, 0], &self.piv_z[0], &self.psi[0], nz)
                        for i in range(nz):
                            zc[i] += self.psi[i]
                            if fabs(self.psi[i]) > dmax:
                                dmax = fabs(self.psi[i])
                        if dmax <= newton_tol:
                            converged = True
                            break
                        if it == 4 and not refreshed:
                            self._rhs(zc, self.f0)
                            self._fd_jacobian(zc, self.f0)
                            self._factor_iteration_matrix(h)
                            refreshed = True
                    if not converged:
                        raise NativeStepError("implicit step %d did not converge" % k,
                                              step_index=k, time=k * h)
                    memcpy(&z[0], &zc[0], nz * sizeof(double))
                    self._store(k + 1, z, xv, pv, uv, vv)
        except NativeStepError as exc:
            if exc.step_index is None:
                raise NativeStepError(str(exc), step_index=step_index,
                                      time=step_index * h) from exc
            raise
        return t_arr, x_arr, p_arr, u_arr, v_arr

    cdef int _rk4_step(self, double[::1] z, double h,
                       double[::1] k1, double[::1] k2,
                       double[::1] k3, double[::1] k4) except -1:
        cdef int nz = self.nz
        cdef int i
        cdef double[::1] zm = self.zmid
        self._rhs(z, k1)
        for i in range(nz):
            zm[i] = z[i] + 0.5 * h * k1[i]
        self._rhs(zm, k2)
        for i in range(nz):
            zm[i] = z[i] + 0.5 * h * k2[i]
        self._rhs(zm, k3)
        for i in range(nz):
            zm[i] = z[i] + h * k3[i]
        self._rhs(zm, k4)
        for i in range(nz):
            z[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        return 0

    cdef int _store(self, int k, double[::1] z,
                    double[:, ::1] xv, double[:, ::1] pv,
                    double[:, ::1] uv, double[:, ::1] vv) except -1:
        cdef int n = self.n
        cdef int i
        cdef double resid
        cdef int iters
        self._eliminate(z[:n], z[n:], &resid, &iters)
        for i in range(n):
            xv[k, i] = z[i]
            pv[k, i] = z[n + i]
        for i in range(self.l):
            uv[k, i] = self.u[i]
        for i in range(self.m):
            vv[k, i] = self.v[i]
        return 0


# ---------------------------------------------------------------------------
# Python entry points
# ---------------------------------------------------------------------------

def propagate(FieldKernel kernel, x0, p0, double horizon, int grid_n, scheme,
              double newton_tol=1e-12, int newton_max_iter=25,
              double elim_tol=1e-12, int elim_max_iter=50):
    cdef Engine eng = Engine(kernel)
    return eng.propagate(
        np.ascontiguousarray(x0, dtype=np.float64),
        np.ascontiguousarray(p0, dtype=np.float64),
        horizon, grid_n, scheme, newton_tol, newton_max_iter,
        elim_tol, elim_max_iter,
    )


def eliminate(FieldKernel kernel, x, p, u0, v0, double tol=1e-12, int max_iter=50):
    """One control elimination through the compiled path (parity checks)."""
    cdef Engine eng = Engine(kernel)
    cdef double resid
    cdef int iters
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    u_arr = np.ascontiguousarray(u0, dtype=np.float64)
    v_arr = np.ascontiguousarray(v0, dtype=np.float64)
    cdef int i
    for i in range(eng.l):
        eng.u[i] = u_arr[i]
    for i in range(eng.m):
        eng.v[i] = v_arr[i]
    eng.elim_tol = tol
    eng.elim_maxit = max_iter
    eng._eliminate(xv, pv, &resid, &iters)
    return (np.asarray(eng.u).copy() if eng.l else np.zeros(0),
            np.asarray(eng.v).copy() if eng.m else np.zeros(0),
            iters, resid)
