"""Pure-numpy reference implementation of the 3x3 convolution kernels.

Same-padding, stride-1 convolutions via im2col + GEMM. This backend is
always available; the compiled `_native` extension replaces it when built.
Both backends compute the same quantities (float paths may differ in the
last ulp because GEMM reassociates the reduction).
"""

import numpy as np

BACKEND = "python"


def _im2col(x):
    # x: (B, C, H, W) -> cols: (B*H*W, C*9) for a 3x3 window, pad 1
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(b, c, 3, 3, h, w), strides=(s0, s1, s2, s3, s2, s3)
    )
    return np.ascontiguousarray(win.transpose(0, 4, 5, 1, 2, 3)).reshape(b * h * w, c * 9)


def conv2d_forward(x, w, b):
    bsz, c, h, wd = x.shape
    o = w.shape[0]
    cols = _im2col(x)
    y = cols @ w.reshape(o, c * 9).T
    if b is not None:
        y += b
    return np.ascontiguousarray(y.reshape(bsz, h, wd, o).transpose(0, 3, 1, 2))


def conv2d_backward_input(dy, w):
    bsz, o, h, wd = dy.shape
    c = w.shape[1]
    dyt = dy.transpose(0, 2, 3, 1).reshape(bsz * h * wd, o)
    dcols = (dyt @ w.reshape(o, c * 9)).reshape(bsz, h, wd, c, 3, 3)
    dxp = np.zeros((bsz, c, h + 2, wd + 2), dtype=dy.dtype)
    for kh in range(3):
        for kw in range(3):
            dxp[:, :, kh : kh + h, kw : kw + wd] += dcols[:, :, :, :, kh, kw].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(dxp[:, :, 1 : h + 1, 1 : wd + 1])


def conv2d_backward_params(dy, x):
    bsz, o, h, wd = dy.shape
    c = x.shape[1]
    cols = _im2col(x)
    dyt = dy.transpose(0, 2, 3, 1).reshape(bsz * h * wd, o)
    dw = (dyt.T @ cols).reshape(o, c, 3, 3)
    db = dy.sum(axis=(0, 2, 3))
    return dw, db
