"""Parameter containers and small neural building blocks on the tensor engine."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, ShapeError, layer_norm, softmax


class Module:
    """Named-parameter container with recursive traversal."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._modules: dict[str, "Module"] = {}

    def register(self, name: str, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        else:
            raise TypeError(f"cannot register {type(value)!r} as {name}")
        setattr(self, name, value)
        return value

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def param(data, requires_grad: bool = True) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


class Linear(Module):
    """Affine map acting on the last axis: y = x @ W + b."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 zero_init: bool = False):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        if zero_init:
            weight = np.zeros((in_dim, out_dim))
        else:
            weight = xavier_uniform(rng, in_dim, out_dim)
        self.register("weight", param(weight))
        self.register("bias", param(np.zeros(out_dim)))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(
                f"linear expects last dim {self.in_dim}, got {x.shape}"
            )
        flat = x.reshape(-1, self.in_dim) if x.ndim != 2 else x
        out = flat @ self.weight + self.bias
        if x.ndim != 2:
            out = out.reshape(x.shape[:-1] + (self.out_dim,))
        return out


class MLP(Module):
    """Stack of linear layers with ReLU between them."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        super().__init__()
        self.layers = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            layer = Linear(a, b, rng)
            self.register(f"layer{i}", layer)
            self.layers.append(layer)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = layer(x).relu()
        return self.layers[-1](x)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.register("gamma", param(np.ones(dim)))
        self.register("beta", param(np.zeros(dim)))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, axis=-1, eps=self.eps)


class Conv2d(Module):
    """3x3-style convolution over a single image, laid out (C, H, W).

    Implemented as gather (im2col via fancy indexing) + matmul, so the
    tensor engine's indexing gradient provides col2im for free.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int,
                 rng: np.random.Generator, padding: int | None = None):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride = kernel, stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = in_ch * kernel * kernel
        weight = xavier_uniform(rng, fan_in, out_ch, shape=(out_ch, fan_in))
        self.register("weight", param(weight))
        self.register("bias", param(np.zeros(out_ch)))
        self._index_cache: dict[tuple[int, int], tuple] = {}

    def _gather_index(self, h_pad: int, w_pad: int):
        key = (h_pad, w_pad)
        if key not in self._index_cache:
            k, s = self.kernel, self.stride
            ho = (h_pad - k) // s + 1
            wo = (w_pad - k) // s + 1
            ci = np.repeat(np.arange(self.in_ch), k * k)
            ky, kx = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
            ky = np.tile(ky.ravel(), self.in_ch)
            kx = np.tile(kx.ravel(), self.in_ch)
            oy, ox = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
            rows = oy.ravel() * s
            cols = ox.ravel() * s
            idx_c = ci[:, None].repeat(ho * wo, axis=1)
            idx_y = ky[:, None] + rows[None, :]
            idx_x = kx[:, None] + cols[None, :]
            self._index_cache[key] = (idx_c, idx_y, idx_x, ho, wo)
        return self._index_cache[key]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[0] != self.in_ch:
            raise ShapeError(
                f"conv expects ({self.in_ch}, H, W), got {x.shape}"
            )
        x = x.pad2d(self.padding)
        idx_c, idx_y, idx_x, ho, wo = self._gather_index(x.shape[1], x.shape[2])
        cols = x[idx_c, idx_y, idx_x]            # (Cin*k*k, Ho*Wo)
        out = self.weight @ cols + self.bias.reshape(self.out_ch, 1)
        return out.reshape(self.out_ch, ho, wo)


class MultiHeadSelfAttention(Module):
    """Dense multi-head self-attention over a small token set."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.register("q_proj", Linear(dim, dim, rng))
        self.register("k_proj", Linear(dim, dim, rng))
        self.register("v_proj", Linear(dim, dim, rng))
        self.register("out_proj", Linear(dim, dim, rng))

    def __call__(self, tokens: Tensor, pos=None) -> Tensor:
        n, dim = tokens.shape
        qk_in = tokens if pos is None else tokens + pos
        q = self.q_proj(qk_in).reshape(n, self.heads, self.head_dim).transpose(1, 0, 2)
        k = self.k_proj(qk_in).reshape(n, self.heads, self.head_dim).transpose(1, 0, 2)
        v = self.v_proj(tokens).reshape(n, self.heads, self.head_dim).transpose(1, 0, 2)
        scores = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(self.head_dim))
        attn = softmax(scores, axis=-1)
        out = (attn @ v).transpose(1, 0, 2).reshape(n, dim)
        return self.out_proj(out)


def sinusoidal_embedding(points, dim: int, temperature: float = 10000.0) -> Tensor:
    """Fixed sinusoidal encoding of normalized (x, y) points into `dim` channels.

    Differentiable in the points when they are a Tensor; `dim` must be a
    multiple of 4 (sin/cos pairs for each of the two coordinates).
    """
    if dim % 4:
        raise ShapeError(f"sinusoidal embedding dim must be divisible by 4, got {dim}")
    pts = points if isinstance(points, Tensor) else Tensor(points)
    quarter = dim // 4
    inv_freq = 1.0 / (temperature ** (np.arange(quarter) / quarter))
    scale = 2.0 * math.pi
    parts = []
    for coord in (0, 1):
        angles = pts[:, coord:coord + 1] * Tensor(inv_freq * scale).reshape(1, quarter)
        parts.append(angles.sin())
        parts.append(angles.cos())
    from .tensor import concat
    return concat(parts, axis=1)
