"""Small float64 neural-network toolkit with hand-written backward passes.

Layers cache what they need during ``forward`` and accumulate parameter
gradients in ``backward``; each backward returns the gradient with respect
to the layer input.  Only the fixed architectures used by the agents are
supported (dense/MLP, single-layer GRU, dropout, categorical head).
"""

from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict

import numpy as np

from .errors import CheckpointError, NumericsError, ShapeError

DTYPE = np.float64
FD_STEP = 1e-5


class Param:
    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name=""):
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


def orthogonal(shape, gain, rng):
    """Orthogonal matrix of ``shape`` scaled by ``gain`` (QR of a Gaussian draw)."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def sigmoid(x):
    # tanh form is overflow-free and faster than a masked exp
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Dense:
    def __init__(self, n_in, n_out, rng, gain=np.sqrt(2.0), name="dense"):
        self.n_in, self.n_out = n_in, n_out
        self.W = Param(orthogonal((n_in, n_out), gain, rng), name + ".W")
        self.b = Param(np.zeros(n_out), name + ".b")
        self._x = None

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        x = np.asarray(x, dtype=DTYPE)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"{self.W.name}: expected input width {self.n_in}, got {x.shape[-1]}")
        self._x = x
        return x @ self.W.value + self.b.value

    def backward(self, dy):
        x = self._x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        self.W.grad += x.T @ dy2
        self.b.grad += dy2.sum(axis=0)
        return dy @ self.W.value.T


class Mlp:
    """tanh hidden layers, linear output (or tanh on the output too with ``tanh_output``)."""

    def __init__(self, widths, rng, out_gain=np.sqrt(2.0), tanh_output=False, name="mlp"):
        if len(widths) < 3:
            raise ShapeError("an MLP needs at least one hidden layer")
        self.widths = tuple(widths)
        n = len(widths) - 1
        self.layers = [Dense(widths[i], widths[i + 1], rng,
                             gain=out_gain if i == n - 1 else np.sqrt(2.0), name=f"{name}.{i}")
                       for i in range(n)]
        self.tanh_output = tanh_output
        self._acts = []

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x):
        self._acts = []
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer.forward(h)
            if i < last or self.tanh_output:
                h = np.tanh(h)
                self._acts.append(h)
        return h

    def backward(self, dy):
        acts = iter(reversed(self._acts))
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            if i < last or self.tanh_output:
                dy = dy * (1.0 - next(acts) ** 2)
            dy = self.layers[i].backward(dy)
        return dy


class Gru:
    """Single-layer GRU; ``forward`` maps (N, T, D) to the final hidden state (N, H).

    z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br),
    n = tanh(x Wn + r * (h Un) + bn), h' = (1 - z) * n + z * h, with h0 = 0.
    """

    def __init__(self, input_size, hidden_size, rng, name="gru"):
        self.D, self.H = input_size, hidden_size
        H = hidden_size
        self.W = Param(np.concatenate([orthogonal((input_size, H), 1.0, rng) for _ in range(3)], axis=1),
                       name + ".W")
        self.U = Param(np.concatenate([orthogonal((H, H), 1.0, rng) for _ in range(3)], axis=1), name + ".U")
        self.b = Param(np.zeros(3 * H), name + ".b")
        self._cache = None

    def params(self):
        return [self.W, self.U, self.b]

    def forward(self, seq):
        seq = np.asarray(seq, dtype=DTYPE)
        if seq.ndim != 3 or seq.shape[2] != self.D or seq.shape[1] == 0:
            raise ShapeError(f"GRU expects (N, T>0, {self.D}), got {seq.shape}")
        N, T, _ = seq.shape
        H = self.H
        W, U, b = self.W.value, self.U.value, self.b.value
        xw = seq @ W + b  # (N, T, 3H)
        h = np.zeros((N, H))
        steps = []
        for t in range(T):
            hu = h @ U
            zr = sigmoid(xw[:, t, :2 * H] + hu[:, :2 * H])
            z, r = zr[:, :H], zr[:, H:]
            hun = hu[:, 2 * H:]
            n = np.tanh(xw[:, t, 2 * H:] + r * hun)
            steps.append((h, z, r, n, hun))
            h = (1.0 - z) * n + z * h
        self._cache = (seq, steps)
        return h

    def backward(self, dh):
        seq, steps = self._cache
        H = self.H
        U = self.U.value
        dxw = np.empty(seq.shape[:2] + (3 * H,))
        dU = np.zeros_like(U)
        for t in range(len(steps) - 1, -1, -1):
            h, z, r, n, hun = steps[t]
            dn = dh * (1.0 - z)
            dz = dh * (h - n)
            dn_pre = dn * (1.0 - n * n)
            dr_pre = dn_pre * hun * r * (1.0 - r)
            dz_pre = dz * z * (1.0 - z)
            dhu = np.concatenate([dz_pre, dr_pre, dn_pre * r], axis=1)
            dU += h.T @ dhu
            dxw[:, t] = np.concatenate([dz_pre, dr_pre, dn_pre], axis=1)
            dh = dh * z + dhu @ U.T
        flat = dxw.reshape(-1, 3 * H)
        self.W.grad += seq.reshape(-1, self.D).T @ flat
        self.b.grad += flat.sum(axis=0)
        self.U.grad += dU
        return dxw @ self.W.value.T


class Dropout:
    """Inverted dropout; identity outside training mode."""

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self._mask = None

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


# -- categorical head -------------------------------------------------------

def log_softmax(logits):
    logits = np.asarray(logits, dtype=DTYPE)
    if not np.all(np.isfinite(logits)):
        raise NumericsError("non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def entropy(logits):
    logp = log_softmax(logits)
    return -(np.exp(logp) * logp).sum(axis=-1)


def categorical_head(logits, rng):
    """Sample one action per row. Returns ``(actions, log_probs, entropies)``."""
    logp = log_softmax(np.atleast_2d(logits))
    probs = np.exp(logp)
    u = rng.random(probs.shape[0])
    actions = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
    actions = np.minimum(actions, probs.shape[1] - 1)
    rows = np.arange(len(actions))
    return actions, logp[rows, actions], -(probs * logp).sum(axis=1)


# -- optimisation -----------------------------------------------------------

def check_finite(params, what="gradient"):
    for p in params:
        arr = p.grad if what == "gradient" else p.value
        if not np.all(np.isfinite(arr)):
            raise NumericsError(f"non-finite {what} in {p.name or 'parameter'} {p.shape}")


def global_norm(params):
    return float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))


def clip_grad_norm(params, max_norm):
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(params)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            p.grad *= scale
    return norm


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        """Bias-corrected update, then zero the gradients. Non-finite values abort before anything changes."""
        check_finite(self.params, "gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        new_values = []
        for p, m, v in zip(self.params, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            new_values.append(p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
        for p, val in zip(self.params, new_values):
            if not np.all(np.isfinite(val)):
                raise NumericsError(f"update would make {p.name or 'parameter'} non-finite")
        for p, val in zip(self.params, new_values):
            p.value[...] = val
            p.zero_grad()


def grad_check(loss_fn, params, step=FD_STEP):
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn()`` must return the scalar loss and, as a side effect, add the
    analytic gradients to ``param.grad``; it is re-run (with gradients zeroed)
    for every finite-difference probe.
    """
    for p in params:
        p.zero_grad()
    loss_fn()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            num = (up - down) / (2.0 * step)
            ai = a.reshape(-1)[i]
            worst = max(worst, abs(ai - num) / (abs(ai) + abs(num) + 1e-10))
    for p in params:
        p.zero_grad()
    return worst


# -- checkpoints ------------------------------------------------------------
#
# little-endian layout:
#   magic b"FDCK" | u16 version | 32-byte sha256 config digest | u32 n_arrays
#   n x ( u16 name_len | name utf-8 | u8 ndim | ndim x u32 dim | f64 data, C order )
#   32-byte sha256 over everything before it

MAGIC = b"FDCK"
VERSION = 1


def config_digest(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


def save_checkpoint(path, arrays: "OrderedDict[str, np.ndarray]", digest: bytes) -> None:
    if len(digest) != 32:
        raise CheckpointError("config digest must be 32 bytes")
    chunks = [MAGIC, struct.pack("<H", VERSION), digest, struct.pack("<I", len(arrays))]
    manifest = [f"version {VERSION}", f"config_sha256 {digest.hex()}"]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks += [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim),
                   struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
        manifest.append(f"{name} {'x'.join(map(str, arr.shape)) or 'scalar'}")
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())
    with open(str(path) + ".manifest", "w") as fh:
        fh.write("\n".join(manifest) + "\n")


def load_checkpoint(path, expected_digest: bytes | None = None):
    """Returns ``(OrderedDict name -> array, digest)``; raises CheckpointError on any corruption or mismatch."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 2 + 32 + 4 + 32 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, trailer = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise CheckpointError(f"{path}: integrity hash mismatch (file modified or truncated)")
    (version,) = struct.unpack_from("<H", body, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    digest = body[6:38]
    if expected_digest is not None and digest != expected_digest:
        raise CheckpointError(f"{path}: checkpoint was written for a different configuration")
    (count,) = struct.unpack_from("<I", body, 38)
    off = 42
    arrays = OrderedDict()
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, off)
            name = body[off + 2:off + 2 + n].decode("utf-8")
            off += 2 + n
            (ndim,) = struct.unpack_from("<B", body, off)
            shape = struct.unpack_from(f"<{ndim}I", body, off + 1)
            off += 1 + 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            arrays[name] = np.frombuffer(body, dtype="<f8", count=size, offset=off).reshape(shape).astype(DTYPE)
            off += 8 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed payload ({exc})") from None
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes in payload")
    return arrays, digest


def named_params(modules: dict) -> "OrderedDict[str, Param]":
    """Flatten ``{prefix: module}`` into an ordered name -> Param map."""
    out = OrderedDict()
    for prefix, mod in modules.items():
        for i, p in enumerate(mod.params()):
            out[f"{prefix}/{i}:{p.name}"] = p
    return out
