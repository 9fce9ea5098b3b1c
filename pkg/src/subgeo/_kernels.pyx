# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Euler-Maruyama kernels for built-in drifts with constant diffusion.

Each path draws its Gaussian increments from its own numpy bit generator,
in the same order as the numpy fallback, so both backends consume identical
streams.
"""
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport cos, fabs, pow, sqrt, NAN, isfinite
from libc.stdlib cimport free, malloc
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal

cdef enum:
    MAXD = 16

cdef double EXPLODE = 1e12


cdef inline double _clip1(double v) noexcept nogil:
    if v > 1.0:
        return 1.0
    if v < -1.0:
        return -1.0
    return v


cdef inline void _drift(int code, const double *p, const double *x, double *out, int d) noexcept nogil:
    cdef int a
    cdef double r = 0.0
    if code == 0:
        for a in range(d):
            out[a] = 0.0
    elif code == 1:
        for a in range(d):
            out[a] = (-p[0]) * x[a]
    elif code == 2:
        if d == 1:
            r = fabs(x[0])
        else:
            for a in range(d):
                r = r + x[a] * x[a]
            r = sqrt(r)
        if p[0] == 2.0:
            for a in range(d):
                out[a] = (-x[a]) * r
        else:
            r = pow(r, p[0] - 1.0)
            for a in range(d):
                out[a] = (-x[a]) * r
    elif code == 3:
        for a in range(d):
            out[a] = (-_clip1(x[a])) * (cos(x[a]) + p[0])
    elif code == 4:
        for a in range(d):
            out[a] = -_clip1(x[a])


cdef inline bint _exploded(const double *x, int d) noexcept nogil:
    cdef int a
    for a in range(d):
        if not isfinite(x[a]) or fabs(x[a]) > EXPLODE:
            return True
    return False


cdef void _nan_rest(double[:, :, ::1] out, Py_ssize_t i, Py_ssize_t start, int d) noexcept nogil:
    cdef Py_ssize_t q
    cdef int a
    for q in range(start, out.shape[1]):
        for a in range(d):
            out[i, q, a] = NAN


def euler_block(int code, double[::1] prm, double[:, ::1] sig, double[:, ::1] x0, list bitgens,
                double dt, Py_ssize_t n_steps, Py_ssize_t rec, double[:, :, ::1] out,
                unsigned char[::1] flags, double[:, ::1] y0=None, double[:, :, ::1] out2=None,
                double[::1] eps=None, long long[::1] ctime=None):
    """Advance ``len(bitgens)`` paths; with ``y0`` given, a synchronous partner too.

    ``out`` has shape ``(n, n_steps // rec + 1, d)``.  The partner is glued to
    the main path once their distance is at most ``eps[i]``; ``ctime`` holds
    the step index of gluing or -1.
    """
    cdef Py_ssize_t n = x0.shape[0]
    cdef int d = <int>x0.shape[1]
    cdef int m = <int>sig.shape[1]
    cdef bint coupled = y0 is not None
    if d > MAXD or m > MAXD:
        raise ValueError(f"compiled kernel supports at most {MAXD} dimensions")
    if len(bitgens) != n:
        raise ValueError("one bit generator per path is required")
    cdef bitgen_t **gens = <bitgen_t **>malloc(n * sizeof(bitgen_t *))
    if gens == NULL:
        raise MemoryError()
    cdef Py_ssize_t i, k, q
    cdef int a, j
    for i in range(n):
        gens[i] = <bitgen_t *>PyCapsule_GetPointer(bitgens[i].capsule, "BitGenerator")
    cdef double x[MAXD]
    cdef double z[MAXD]
    cdef double bx[MAXD]
    cdef double bz[MAXD]
    cdef double xi[MAXD]
    cdef double inc, dist
    cdef double sqdt = sqrt(dt)
    cdef const double *p = &prm[0]
    cdef bint glued
    cdef bitgen_t *st
    try:
        with nogil:
            for i in range(n):
                st = gens[i]
                for a in range(d):
                    x[a] = x0[i, a]
                    out[i, 0, a] = x[a]
                glued = False
                if coupled:
                    dist = 0.0
                    for a in range(d):
                        z[a] = y0[i, a]
                        dist = dist + (x[a] - z[a]) * (x[a] - z[a])
                    if sqrt(dist) <= eps[i]:
                        glued = True
                        ctime[i] = 0
                        for a in range(d):
                            z[a] = x[a]
                    else:
                        ctime[i] = -1
                    for a in range(d):
                        out2[i, 0, a] = z[a]
                for k in range(n_steps):
                    for j in range(m):
                        xi[j] = random_standard_normal(st)
                    _drift(code, p, x, bx, d)
                    if coupled and not glued:
                        _drift(code, p, z, bz, d)
                    for a in range(d):
                        inc = 0.0
                        for j in range(m):
                            inc = inc + sig[a, j] * xi[j]
                        x[a] = x[a] + bx[a] * dt + inc * sqdt
                        if coupled and not glued:
                            z[a] = z[a] + bz[a] * dt + inc * sqdt
                    if _exploded(x, d) or (coupled and not glued and _exploded(z, d)):
                        flags[i] = 1
                        q = (k + rec) // rec
                        _nan_rest(out, i, q, d)
                        if coupled:
                            _nan_rest(out2, i, q, d)
                        break
                    if coupled:
                        if glued:
                            for a in range(d):
                                z[a] = x[a]
                        else:
                            dist = 0.0
                            for a in range(d):
                                dist = dist + (x[a] - z[a]) * (x[a] - z[a])
                            if sqrt(dist) <= eps[i]:
                                glued = True
                                ctime[i] = k + 1
                                for a in range(d):
                                    z[a] = x[a]
                    if (k + 1) % rec == 0:
                        q = (k + 1) // rec
                        for a in range(d):
                            out[i, q, a] = x[a]
                            if coupled:
                                out2[i, q, a] = z[a]
    finally:
        free(gens)
