"""Vectorised numpy kernels for 2-D convolution and max pooling.

All kernels take and return float64 C-contiguous arrays. Convolution is
cross-correlation (no kernel flip), stride 1, symmetric zero padding.
Layouts: images [B, C, H, W], filters [O, C, kh, kw].
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "numpy"


def _im2col(x: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    """Return patches [B, H_out*W_out, C*kh*kw] of the padded input."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # windows: [B, C, H_out, W_out, kh, kw]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols)


def conv2d_forward(x: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    b, c, h, ww = x.shape
    o, cin, kh, kw = w.shape
    if cin != c:
        raise ValueError(f"channel mismatch: input has {c}, filters expect {cin}")
    ho = h + 2 * pad - kh + 1
    wo = ww + 2 * pad - kw + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"kernel {kh}x{kw} with pad {pad} does not fit {h}x{ww} input")
    cols = _im2col(x, kh, kw, pad)
    out = cols @ w.reshape(o, -1).T  # [B, Ho*Wo, O]
    return np.ascontiguousarray(out.transpose(0, 2, 1).reshape(b, o, ho, wo))


def conv2d_backward_x(dy: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    """Gradient w.r.t. the input: full correlation with flipped, swapped filters."""
    o, c, kh, kw = w.shape
    w_rot = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d_forward(dy, w_rot, pad=kh - 1 - pad)


def conv2d_backward_w(x: np.ndarray, dy: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    b, o = dy.shape[0], dy.shape[1]
    c = x.shape[1]
    cols = _im2col(x, kh, kw, pad)  # [B, Ho*Wo, C*kh*kw]
    dy_mat = dy.reshape(b, o, -1)  # [B, O, Ho*Wo]
    dw = np.einsum("bok,bkn->on", dy_mat, cols, optimize=True)
    return np.ascontiguousarray(dw.reshape(o, c, kh, kw))


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pool, stride 2. Returns (pooled, argmax in {0,1,2,3}).

    The argmax indexes window positions in row-major order, so ties go to
    the first maximal element scanned row by row.
    """
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    # [B, C, H/2, W/2, 4] with window cells in order (0,0),(0,1),(1,0),(1,1)
    win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(b, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=4).astype(np.int64)
    out = np.take_along_axis(win, idx[..., None], axis=4)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(dy: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    b, c, ho, wo = dy.shape
    dwin = np.zeros((b, c, ho, wo, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=4)
    dx = dwin.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
    return np.ascontiguousarray(dx)
