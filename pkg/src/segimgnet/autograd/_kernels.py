"""Compiled loops for convolution data movement (numpy slicing is several times slower here)."""

import math

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def depthwise_forward(xp, w, stride, out):
    N, C, Ho, Wo = out.shape
    K = w.shape[2]
    for n in range(N):
        for c in range(C):
            for h in range(Ho):
                orow = out[n, c, h]
                for i in range(K):
                    xrow = xp[n, c, h * stride + i]
                    for j in range(K):
                        wv = w[c, 0, i, j]
                        if stride == 1:  # unit stride lets the inner loop vectorize
                            for q in range(Wo):
                                orow[q] += xrow[q + j] * wv
                        else:
                            for q in range(Wo):
                                orow[q] += xrow[q * stride + j] * wv
    return out


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def depthwise_backward(xp, w, g, stride, dxp, dw):
    N, C, Ho, Wo = g.shape
    K = w.shape[2]
    for n in range(N):
        for c in range(C):
            for h in range(Ho):
                grow = g[n, c, h]
                for i in range(K):
                    r = h * stride + i
                    drow = dxp[n, c, r]
                    xrow = xp[n, c, r]
                    for j in range(K):
                        wv = w[c, 0, i, j]
                        acc = 0.0
                        if stride == 1:
                            seg = drow[j:j + Wo]
                            xs = xrow[j:j + Wo]
                            for q in range(Wo):
                                seg[q] += grow[q] * wv
                            for q in range(Wo):
                                acc += grow[q] * xs[q]
                        else:
                            for q in range(Wo):
                                drow[q * stride + j] += grow[q] * wv
                                acc += grow[q] * xrow[q * stride + j]
                        dw[c, 0, i, j] += acc
    return dxp, dw


# Rational erf on [-4, 4] (clamped outside), ~2.5e-7 absolute error: float32 rounding level,
# and unlike math.erf it vectorizes.  float64 inputs take the exact libm path.  The float32
# gradient differentiates the rational form itself, so it is the exact derivative of the
# forward function and needs no exp (which does not vectorize without SVML).
_ERF_P = (-2.72614225801306e-10, 2.77068142495902e-08, -2.10102402082508e-06, -5.69250639462346e-05,
          -7.34990630326855e-04, -2.95459980854025e-03, -1.60960333262415e-02)
_ERF_Q = (-1.45660718464996e-05, -2.13374055278905e-04, -1.68282697438203e-03, -7.37332916720468e-03,
          -1.42647390514189e-02)
_P = tuple(np.float32(v) for v in _ERF_P)
_Q = tuple(np.float32(v) for v in _ERF_Q)


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def _gelu_cdf32(xf, of):
    p0, p1, p2, p3, p4, p5, p6 = _P
    q0, q1, q2, q3, q4 = _Q
    for k in range(xf.size):
        z = min(max(xf[k] * np.float32(0.70710677), np.float32(-4.0)), np.float32(4.0))
        z2 = z * z
        p = ((((((p0 * z2 + p1) * z2 + p2) * z2 + p3) * z2 + p4) * z2 + p5) * z2 + p6) * z
        q = (((q0 * z2 + q1) * z2 + q2) * z2 + q3) * z2 + q4
        of[k] = np.float32(0.5) * (np.float32(1.0) + p / q)


@numba.njit(cache=True, error_model="numpy")
def _gelu_cdf64(xf, of):
    for k in range(xf.size):
        of[k] = 0.5 * (1.0 + math.erf(xf[k] * 0.7071067811865476))


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def _gelu_grad32(xf, cf, gf, of):
    p0, p1, p2, p3, p4, p5, p6 = _P
    q0, q1, q2, q3, q4 = _Q
    r = np.float32(0.70710677)
    for k in range(xf.size):
        x = xf[k]
        z = x * r
        inside = np.float32(1.0) if abs(z) < np.float32(4.0) else np.float32(0.0)
        u = z * z
        P = (((((p0 * u + p1) * u + p2) * u + p3) * u + p4) * u + p5) * u + p6
        dP = ((((np.float32(6.0) * p0 * u + np.float32(5.0) * p1) * u + np.float32(4.0) * p2) * u
               + np.float32(3.0) * p3) * u + np.float32(2.0) * p4) * u + p5
        Q = (((q0 * u + q1) * u + q2) * u + q3) * u + q4
        dQ = ((np.float32(4.0) * q0 * u + np.float32(3.0) * q1) * u + np.float32(2.0) * q2) * u + q3
        # d/dz [z P(z^2) / Q(z^2)]
        derf = ((P + np.float32(2.0) * u * dP) * Q - np.float32(2.0) * u * P * dQ) / (Q * Q)
        of[k] = gf[k] * (cf[k] + x * np.float32(0.5) * r * derf * inside)


@numba.njit(cache=True, error_model="numpy")
def _gelu_grad64(xf, cf, gf, of):
    for k in range(xf.size):
        x = xf[k]
        of[k] = gf[k] * (cf[k] + x * 0.3989422804014327 * math.exp(-0.5 * x * x))


def gelu_cdf(x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    (_gelu_cdf32 if x.dtype == np.float32 else _gelu_cdf64)(x.reshape(-1), out.reshape(-1))
    return out


def gelu_grad(x: np.ndarray, cdf: np.ndarray, g: np.ndarray) -> np.ndarray:
    g = np.ascontiguousarray(g, dtype=x.dtype)
    out = np.empty_like(x)
    (_gelu_grad32 if x.dtype == np.float32 else _gelu_grad64)(x.reshape(-1), cdf.reshape(-1), g.reshape(-1), out.reshape(-1))
    return out


def warmup() -> None:
    for dt in (np.float32, np.float64):
        xp = np.zeros((1, 1, 3, 3), dt)
        w = np.zeros((1, 1, 3, 3), dt)
        g = np.zeros((1, 1, 1, 1), dt)
        depthwise_forward(xp, w, 1, np.zeros((1, 1, 1, 1), dt))
        depthwise_backward(xp, w, g, 1, np.zeros_like(xp), np.zeros_like(w))
        cols = im2col(xp, 3, 1, 1, 1, np.zeros((1, 9, 1), dt))
        col2im(cols, 3, 1, 1, 1, np.zeros_like(xp))
        gelu_grad(xp, gelu_cdf(xp), xp)


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def im2col(xp, K, stride, Ho, Wo, cols):
    """cols[n, (c*K + i)*K + j, h*Wo + w] = xp[n, c, h*stride + i, w*stride + j]."""
    N, C = xp.shape[0], xp.shape[1]
    for n in range(N):
        for c in range(C):
            for i in range(K):
                for j in range(K):
                    dst = cols[n, (c * K + i) * K + j]
                    for h in range(Ho):
                        src = xp[n, c, h * stride + i]
                        o = h * Wo
                        if stride == 1:
                            for q in range(Wo):
                                dst[o + q] = src[q + j]
                        else:
                            for q in range(Wo):
                                dst[o + q] = src[q * stride + j]
    return cols


@numba.njit(cache=True, fastmath=True, error_model="numpy")
def col2im(dcols, K, stride, Ho, Wo, dxp):
    N, C = dxp.shape[0], dxp.shape[1]
    for n in range(N):
        for c in range(C):
            for i in range(K):
                for j in range(K):
                    src = dcols[n, (c * K + i) * K + j]
                    for h in range(Ho):
                        drow = dxp[n, c, h * stride + i]
                        o = h * Wo
                        if stride == 1:
                            for q in range(Wo):
                                drow[q + j] += src[o + q]
                        else:
                            for q in range(Wo):
                                drow[q * stride + j] += src[o + q]
    return dxp
