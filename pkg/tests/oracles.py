"""Scalar-loop reference implementations, independent of the vectorised code."""
import math

import numpy as np


def conv2d_loop(x, w, b):
    bsz, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((bsz, o, h, wd))
    for n in range(bsz):
        for oc in range(o):
            for i in range(h):
                for j in range(wd):
                    acc = b[oc]
                    for ic in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                ii, jj = i + di - ph, j + dj - pw
                                if 0 <= ii < h and 0 <= jj < wd:
                                    acc += x[n, ic, ii, jj] * w[oc, ic, di, dj]
                    out[n, oc, i, j] = acc
    return out


def fully_connected_loop(x, w, b):
    flat = x.reshape(x.shape[0], -1)
    out = np.zeros((x.shape[0], w.shape[0]))
    for n in range(flat.shape[0]):
        for o in range(w.shape[0]):
            acc = b[o]
            for i in range(flat.shape[1]):
                acc += w[o, i] * flat[n, i]
            out[n, o] = acc
    return out


def atpl_loop(pred, gt, weights):
    steps, joints, _ = pred.shape
    total = 0.0
    for t in range(steps):
        inner = 0.0
        for j in range(joints):
            inner += sum((pred[t, j, k] - gt[t, j, k]) ** 2 for k in range(3))
        total += weights[t] * inner
    return total / joints


def mpjpe_loop(pred, gt, horizons):
    out = []
    joints = pred.shape[1]
    for h in horizons:
        s = 0.0
        for j in range(joints):
            s += math.sqrt(sum((pred[h - 1, j, k] - gt[h - 1, j, k]) ** 2 for k in range(3)))
        out.append(s / joints)
    return out


def memory_members_loop(t):
    """Direct transcription of the sparse memory rule as index lists."""
    if t == 1 or t % 2 == 1:
        return [t]
    members = []
    k = 1
    while k <= t - 1:
        members.append(k)
        k += 2
    members.append(f"{t}+h0")
    return members
