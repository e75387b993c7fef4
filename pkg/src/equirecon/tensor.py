"""Minimal reverse-mode autodiff engine on numpy arrays.

Real-valued tensors form a dynamically built computation graph; complex data
is carried as explicit (re, im) pairs by :class:`ComplexTensor`. The op set
is deliberately small: elementwise arithmetic, reductions, ReLU, 2D
convolution, a centered orthonormal 2D FFT and bilinear content rescaling.
Gradients are exact reverse-mode derivatives; a graph is consumed by the
backward pass and cannot be walked twice.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import DomainError, ShapeError, StateError

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True


def set_default_dtype(dtype):
    """Set the dtype used for newly created tensors (float32 or float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise DomainError(f"unsupported default dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def using_dtype(dtype):
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled():
    return _GRAD_ENABLED


def _unbroadcast(grad, shape):
    # Sum gradient over axes that were broadcast in the forward op.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """N-dimensional real array participating in a reverse-mode graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._consumed = False

    @staticmethod
    def _from_op(data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = True
        out.grad = None
        out._parents = tuple(parents)
        out._backward = backward
        out._consumed = False
        return out

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- autodiff machinery ----------------------------------------------------

    def _accumulate(self, grad):
        grad = _unbroadcast(grad, self.data.shape)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        """Run reverse-mode accumulation from this scalar into all leaves.

        The graph is consumed: interior closures are dropped as they run and a
        second backward through any part of it raises StateError.
        """
        if self.data.size != 1:
            raise ShapeError("backward requires a scalar loss")
        if self._consumed:
            raise StateError("backward called on a consumed graph")

        topo = []
        visiting = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visiting:
                continue
            if node._consumed:
                raise StateError("graph shares nodes with an already consumed graph")
            visiting.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visiting and p._backward is not None or (
                    p._parents and id(p) not in visiting
                ):
                    stack.append((p, False))
                elif id(p) not in visiting and p.requires_grad:
                    # leaves carry no closure but still need grad storage
                    pass

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
                node._backward = None
                node._parents = ()
                node._consumed = True

    # -- elementwise arithmetic ------------------------------------------------

    @staticmethod
    def _coerce(other):
        if isinstance(other, Tensor):
            return other
        return Tensor(other)

    def __add__(self, other):
        other = Tensor._coerce(other)
        data = self.data + other.data
        if not (_GRAD_ENABLED and (self.requires_grad or other.requires_grad)):
            return Tensor(data, dtype=data.dtype)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g)
            if other.requires_grad:
                other._accumulate(g)

        return Tensor._from_op(data, (self, other), backward)

    __radd__ = __add__

    def __mul__(self, other):
        other = Tensor._coerce(other)
        data = self.data * other.data
        if not (_GRAD_ENABLED and (self.requires_grad or other.requires_grad)):
            return Tensor(data, dtype=data.dtype)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * other.data)
            if other.requires_grad:
                other._accumulate(g * self.data)

        return Tensor._from_op(data, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-Tensor._coerce(other))

    def __rsub__(self, other):
        return Tensor._coerce(other) + (-self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other.reciprocal()
        return self * (1.0 / other)

    def reciprocal(self):
        data = 1.0 / self.data
        if not (_GRAD_ENABLED and self.requires_grad):
            return Tensor(data, dtype=data.dtype)

        def backward(g):
            self._accumulate(-g * data * data)

        return Tensor._from_op(data, (self,), backward)

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise ShapeError("only scalar exponents are supported")
        data = self.data ** exponent
        if not (_GRAD_ENABLED and self.requires_grad):
            return Tensor(data, dtype=data.dtype)

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor._from_op(data, (self,), backward)

    def sqrt(self):
        data = np.sqrt(self.data)
        if not (_GRAD_ENABLED and self.requires_grad):
            return Tensor(data, dtype=data.dtype)

        def backward(g):
            self._accumulate(g * (0.5 / data))

        return Tensor._from_op(data, (self,), backward)

    def relu(self):
        data = np.maximum(self.data, 0.0)
        if not (_GRAD_ENABLED and self.requires_grad):
            return Tensor(data, dtype=data.dtype)
        mask = self.data > 0.0

        def backward(g):
            self._accumulate(g * mask)

        return Tensor._from_op(data, (self,), backward)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        data = self.data.sum(axis=axis, keepdims=keepdims)
        data = np.asarray(data)
        if not (_GRAD_ENABLED and self.requires_grad):
            return Tensor(data, dtype=data.dtype)
        in_shape = self.data.shape

        def backward(g):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                for ax in sorted(a % len(in_shape) for a in axes):
                    gg = np.expand_dims(gg, ax)
            self._accumulate(np.broadcast_to(gg, in_shape).copy())

        return Tensor._from_op(data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def max(self, axis):
        """Maximum along one axis; gradient routes to the first argmax."""
        axis = axis % self.data.ndim
        data = self.data.max(axis=axis)
        if not (_GRAD_ENABLED and self.requires_grad):
            return Tensor(data, dtype=data.dtype)
        idx = np.expand_dims(self.data.argmax(axis=axis), axis)

        def backward(g):
            full = np.zeros_like(self.data)
            np.put_along_axis(full, idx, np.expand_dims(g, axis), axis)
            self._accumulate(full)

        return Tensor._from_op(data, (self,), backward)

    # -- shape manipulation ------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = self.data.reshape(shape)
        if not (_GRAD_ENABLED and self.requires_grad):
            return Tensor(data, dtype=data.dtype)
        in_shape = self.data.shape

        def backward(g):
            self._accumulate(g.reshape(in_shape))

        return Tensor._from_op(data, (self,), backward)

    def __getitem__(self, index):
        data = self.data[index]
        if not (_GRAD_ENABLED and self.requires_grad):
            return Tensor(data, dtype=data.dtype)

        def backward(g):
            full = np.zeros_like(self.data)
            full[index] = g  # basic slicing only: no repeated indices
            self._accumulate(full)

        return Tensor._from_op(data, (self,), backward)


def stack(tensors, axis=0):
    tensors = list(tensors)
    data = np.stack([t.data for t in tensors], axis=axis)
    if not (_GRAD_ENABLED and any(t.requires_grad for t in tensors)):
        return Tensor(data, dtype=data.dtype)

    def backward(g):
        pieces = np.moveaxis(g, axis, 0)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor._from_op(data, tuple(tensors), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul supports 2D operands only")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data
    if not (_GRAD_ENABLED and (a.requires_grad or b.requires_grad)):
        return Tensor(data, dtype=data.dtype)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._from_op(data, (a, b), backward)


# -- 2D convolution ---------------------------------------------------------------


def _conv2d_np(x, w, padding):
    """Same-size stride-1 cross-correlation of (N,C,H,W) with (O,C,k,k)."""
    n, c, h, width = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    mode = "wrap" if padding == "circular" else "constant"
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode=mode)
    # accumulate in (O, N, H, W) layout, one kernel tap at a time
    out = np.zeros((o, n, h, width), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i : i + h, j : j + width]
            out += np.tensordot(w[:, :, i, j], patch, axes=([1], [1]))
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def _conv2d_grad_w(x, g, k, padding):
    n, c, h, width = x.shape
    o = g.shape[1]
    p = k // 2
    mode = "wrap" if padding == "circular" else "constant"
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode=mode)
    gw = np.empty((o, c, k, k), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i : i + h, j : j + width]
            gw[:, :, i, j] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
    return gw


def conv2d(x: Tensor, w: Tensor, padding: str = "zero") -> Tensor:
    """Stride-1 "same" cross-correlation, differentiable in input and kernel.

    ``padding`` is ``"zero"`` or ``"circular"``; circular padding commutes
    exactly with integer translations of the input.
    """
    if padding not in ("zero", "circular"):
        raise DomainError(f"unknown padding mode {padding!r}")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects input (N,C,H,W) and kernel (O,C,k,k)")
    k = w.data.shape[2]
    if k % 2 != 1 or w.data.shape[3] != k:
        raise ShapeError("conv2d kernels must be square with odd size")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"channel mismatch: input has {x.data.shape[1]}, kernel expects {w.data.shape[1]}"
        )
    data = _conv2d_np(x.data, w.data, padding)
    if not (_GRAD_ENABLED and (x.requires_grad or w.requires_grad)):
        return Tensor(data, dtype=data.dtype)

    def backward(g):
        if x.requires_grad:
            # adjoint of same-size conv: conv with channel-swapped flipped kernel
            wt = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].swapaxes(0, 1))
            x._accumulate(_conv2d_np(g, wt, padding))
        if w.requires_grad:
            w._accumulate(_conv2d_grad_w(x.data, g, k, padding))

    return Tensor._from_op(data, (x, w), backward)


# -- centered orthonormal FFT -------------------------------------------------------


def _fft2c_np(x):
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(x, axes=(-2, -1)), norm="ortho"), axes=(-2, -1)
    )


def _ifft2c_np(x):
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(x, axes=(-2, -1)), norm="ortho"), axes=(-2, -1)
    )


def _fft_pair(re: Tensor, im: Tensor, inverse: bool) -> Tensor:
    """Apply the centered unitary 2D DFT to a (re, im) pair.

    Returns a packed tensor of shape (2, ...) holding the transformed pair.
    The map is unitary as a real-linear operator, so its adjoint is the
    inverse transform applied to the output gradients.
    """
    if re.data.shape != im.data.shape:
        raise ShapeError("re/im shape mismatch")
    if re.data.ndim < 2:
        raise ShapeError("fft2c needs at least two spatial dimensions")
    fwd = _ifft2c_np if inverse else _fft2c_np
    adj = _fft2c_np if inverse else _ifft2c_np
    z = fwd(re.data + 1j * im.data)
    data = np.stack([z.real.astype(re.data.dtype), z.imag.astype(re.data.dtype)])
    if not (_GRAD_ENABLED and (re.requires_grad or im.requires_grad)):
        return Tensor(data, dtype=data.dtype)

    def backward(g):
        gz = adj(g[0] + 1j * g[1])
        if re.requires_grad:
            re._accumulate(gz.real.astype(re.data.dtype))
        if im.requires_grad:
            im._accumulate(gz.imag.astype(im.data.dtype))

    return Tensor._from_op(data, (re, im), backward)


# -- content rescaling ---------------------------------------------------------------


def _bilinear_geometry(h, w, s):
    """Gather indices and weights for magnifying content by factor s.

    Output pixel (u, v) samples the input at center + (pixel - center)/s.
    Positions outside the continuous support [0, H-1] x [0, W-1] are marked
    invalid and take the fill value.
    """
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    us = cy + (np.arange(h) - cy) / s
    vs = cx + (np.arange(w) - cx) / s
    valid = (
        (us >= 0.0)[:, None] & (us <= h - 1)[:, None] & (vs >= 0.0)[None, :] & (vs <= w - 1)[None, :]
    )
    i0 = np.clip(np.floor(us).astype(np.int64), 0, h - 1)
    j0 = np.clip(np.floor(vs).astype(np.int64), 0, w - 1)
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fi = np.clip(us - i0, 0.0, 1.0)
    fj = np.clip(vs - j0, 0.0, 1.0)
    return i0, i1, j0, j1, fi, fj, valid


def _resample_scale_np(arr, s, fill=0.0):
    """Bilinear rescaling of content about the grid center, size preserved."""
    if s <= 0:
        raise DomainError(f"scale factor must be positive, got {s}")
    if s == 1.0:
        return arr.copy()
    h, w = arr.shape[-2:]
    i0, i1, j0, j1, fi, fj, valid = _bilinear_geometry(h, w, s)
    fi = fi[:, None]
    fj = fj[None, :]
    out = (
        arr[..., i0[:, None], j0[None, :]] * (1 - fi) * (1 - fj)
        + arr[..., i0[:, None], j1[None, :]] * (1 - fi) * fj
        + arr[..., i1[:, None], j0[None, :]] * fi * (1 - fj)
        + arr[..., i1[:, None], j1[None, :]] * fi * fj
    )
    out = np.where(valid, out, np.asarray(fill, dtype=out.dtype))
    return out.astype(arr.dtype, copy=False)


def resample_scale_real(x: Tensor, s: float, fill: float = 0.0) -> Tensor:
    """Differentiable content rescaling over the trailing two axes."""
    if s <= 0:
        raise DomainError(f"scale factor must be positive, got {s}")
    if s == 1.0:
        # exact identity, still differentiable
        return x * 1.0 if (x.requires_grad and _GRAD_ENABLED) else Tensor(x.data.copy(), dtype=x.dtype)
    data = _resample_scale_np(x.data, s, fill)
    if not (_GRAD_ENABLED and x.requires_grad):
        return Tensor(data, dtype=data.dtype)

    h, w = x.data.shape[-2:]
    i0, i1, j0, j1, fi, fj, valid = _bilinear_geometry(h, w, s)

    def backward(g):
        lead = x.data.shape[:-2]
        gflat = g.reshape((-1, h, w))
        full = np.zeros((gflat.shape[0], h, w), dtype=g.dtype)
        vi, vj = np.nonzero(valid)
        gv = gflat[:, vi, vj]
        rows = np.arange(gflat.shape[0])[:, None]
        wfi = fi[vi]
        wfj = fj[vj]
        np.add.at(full, (rows, i0[vi], j0[vj]), gv * (1 - wfi) * (1 - wfj))
        np.add.at(full, (rows, i0[vi], j1[vj]), gv * (1 - wfi) * wfj)
        np.add.at(full, (rows, i1[vi], j0[vj]), gv * wfi * (1 - wfj))
        np.add.at(full, (rows, i1[vi], j1[vj]), gv * wfi * wfj)
        x._accumulate(full.reshape(lead + (h, w)))

    return Tensor._from_op(data, (x,), backward)


# -- complex pairs ------------------------------------------------------------------


class ComplexTensor:
    """Pair of same-shape real tensors standing in for a complex array."""

    __slots__ = ("re", "im")

    def __init__(self, re: Tensor, im: Tensor):
        if not isinstance(re, Tensor):
            re = Tensor(re)
        if not isinstance(im, Tensor):
            im = Tensor(im)
        if re.data.shape != im.data.shape:
            raise ShapeError("re and im must share a shape")
        self.re = re
        self.im = im

    @classmethod
    def from_numpy(cls, arr, requires_grad=False):
        arr = np.asarray(arr)
        return cls(
            Tensor(arr.real, requires_grad=requires_grad),
            Tensor(arr.imag, requires_grad=requires_grad),
        )

    def numpy(self):
        return self.re.data + 1j * self.im.data

    @property
    def shape(self):
        return self.re.data.shape

    @property
    def requires_grad(self):
        return self.re.requires_grad or self.im.requires_grad

    def __add__(self, other):
        return ComplexTensor(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        return ComplexTensor(self.re - other.re, self.im - other.im)

    def __neg__(self):
        return ComplexTensor(-self.re, -self.im)

    def __mul__(self, other):
        if isinstance(other, ComplexTensor):
            return ComplexTensor(
                self.re * other.re - self.im * other.im,
                self.re * other.im + self.im * other.re,
            )
        # real tensor or scalar acts on both components
        return ComplexTensor(self.re * other, self.im * other)

    __rmul__ = __mul__

    def conj(self):
        return ComplexTensor(self.re, -self.im)

    def abs2(self) -> Tensor:
        return self.re * self.re + self.im * self.im

    def reshape(self, *shape):
        return ComplexTensor(self.re.reshape(*shape), self.im.reshape(*shape))

    def sum(self, axis=None, keepdims=False):
        return ComplexTensor(
            self.re.sum(axis=axis, keepdims=keepdims),
            self.im.sum(axis=axis, keepdims=keepdims),
        )

    def __getitem__(self, index):
        return ComplexTensor(self.re[index], self.im[index])


def fft2c(x: ComplexTensor) -> ComplexTensor:
    """Centered orthonormal 2D DFT over the trailing two axes."""
    packed = _fft_pair(x.re, x.im, inverse=False)
    return ComplexTensor(packed[0], packed[1])


def ifft2c(x: ComplexTensor) -> ComplexTensor:
    packed = _fft_pair(x.re, x.im, inverse=True)
    return ComplexTensor(packed[0], packed[1])


def resample_scale(x, s: float, fill=0.0):
    """Rescale image content by factor s about the grid center.

    Accepts a real Tensor or a ComplexTensor; grid size is unchanged and
    out-of-support samples take the fill value (complex fill applies its
    real/imag parts to the respective components).
    """
    if isinstance(x, ComplexTensor):
        fr = float(np.real(fill))
        fi = float(np.imag(fill))
        return ComplexTensor(
            resample_scale_real(x.re, s, fr), resample_scale_real(x.im, s, fi)
        )
    return resample_scale_real(x, s, float(np.real(fill)))
