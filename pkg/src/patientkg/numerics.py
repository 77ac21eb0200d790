"""Dense float64 matrix primitives and a small reverse-mode gradient tape.

Matrices are plain 2-D ``numpy.float64`` arrays. The tape supports exactly the
primitives the classifier needs; each recorded step keeps its forward function
so a tape can be replayed and checked against the values it recorded.
"""

import io
import json
import struct

import numpy as np

from .errors import CheckpointError, NonFiniteError, ShapeError, VocabularyError

# -- plain matrix functions --------------------------------------------------


def as_matrix(x):
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("matrix contains non-finite values")
    return m


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def row_softmax(m):
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def tanh(m):
    return np.tanh(m)


def sigmoid(m):
    # exp(-log(1 + exp(-x))), overflow-free for large |x|
    return np.exp(-np.logaddexp(0.0, -m))


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


# -- tape --------------------------------------------------------------------


class Var:
    """A value recorded on a :class:`Tape`; ``grad`` is filled by ``Tape.backward``."""

    __slots__ = ("value", "grad", "name", "requires_grad")

    def __init__(self, value, name=None, requires_grad=False):
        self.value = value
        self.grad = None
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"


class _Record:
    __slots__ = ("op", "inputs", "output", "forward", "backward")

    def __init__(self, op, inputs, output, forward, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.forward = forward
        self.backward = backward


class Tape:
    """Ordered record of primitive applications for one scalar loss."""

    def __init__(self):
        self.records = []
        self.leaves = []

    def param(self, value, name=None):
        v = Var(np.asarray(value, dtype=np.float64), name=name, requires_grad=True)
        self.leaves.append(v)
        return v

    def const(self, value, name=None):
        return Var(np.asarray(value, dtype=np.float64), name=name)

    def _apply(self, op, inputs, forward, backward):
        out = Var(forward(*(x.value for x in inputs)), requires_grad=any(x.requires_grad for x in inputs))
        self.records.append(_Record(op, inputs, out, forward, backward))
        return out

    # primitives -------------------------------------------------------------

    def matmul(self, a, b):
        return self._apply(
            "matmul",
            (a, b),
            matmul,
            lambda g, av, bv, out: (g @ bv.T, av.T @ g),
        )

    def add(self, a, b):
        _check_same_shape(a.value, b.value, "add")
        return self._apply("add", (a, b), np.add, lambda g, av, bv, out: (g, g))

    def mul(self, a, b):
        _check_same_shape(a.value, b.value, "mul")
        return self._apply("mul", (a, b), np.multiply, lambda g, av, bv, out: (g * bv, g * av))

    def tanh(self, a):
        return self._apply("tanh", (a,), tanh, lambda g, av, out: (g * (1.0 - out * out),))

    def sigmoid(self, a):
        return self._apply("sigmoid", (a,), sigmoid, lambda g, av, out: (g * out * (1.0 - out),))

    def row_softmax(self, a):
        def backward(g, av, out):
            return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

        return self._apply("row_softmax", (a,), row_softmax, backward)

    def transpose(self, a):
        return self._apply("transpose", (a,), np.transpose, lambda g, av, out: (g.T,))

    def concat(self, parts, axis):
        sizes = [p.value.shape[axis] for p in parts]
        bounds = np.cumsum(sizes)[:-1]

        def forward(*values):
            return np.concatenate(values, axis=axis)

        def backward(g, *args):
            return tuple(np.split(g, bounds, axis=axis))

        return self._apply(f"concat{axis}", tuple(parts), forward, backward)

    def gather_rows(self, table, ids):
        """Rows ``table[ids]``; gradients scatter-add back into the table."""
        ids = np.asarray(ids, dtype=np.int64)
        rows = table.value.shape[0]
        if ids.size and (ids.min() < 0 or ids.max() >= rows):
            bad = int(ids.max()) if ids.max() >= rows else int(ids.min())
            raise VocabularyError(f"token id {bad} outside embedding table of {rows} rows")

        def forward(tv):
            return tv[ids]

        def backward(g, tv, out):
            grad = np.zeros_like(tv)
            np.add.at(grad, ids, g)
            return (grad,)

        return self._apply("gather_rows", (table,), forward, backward)

    def row_sum(self, a):
        """Sum across columns, giving a column vector."""
        return self._apply(
            "row_sum",
            (a,),
            lambda av: av.sum(axis=1, keepdims=True),
            lambda g, av, out: (np.broadcast_to(g, av.shape).copy(),),
        )

    def bce(self, p, y, clamp=1e-12):
        """Mean binary cross-entropy of probabilities ``p`` against 0/1 targets ``y``."""
        _check_same_shape(p.value, y.value, "bce")
        n = p.value.size

        def forward(pv, yv):
            q = np.clip(pv, clamp, 1.0 - clamp)
            return np.array([[-np.mean(yv * np.log(q) + (1.0 - yv) * np.log(1.0 - q))]])

        def backward(g, pv, yv, out):
            q = np.clip(pv, clamp, 1.0 - clamp)
            inside = (pv >= clamp) & (pv <= 1.0 - clamp)
            gp = np.where(inside, (q - yv) / (q * (1.0 - q)), 0.0) * (g[0, 0] / n)
            gy = (np.log(1.0 - q) - np.log(q)) * (g[0, 0] / n)
            return gp, gy

        return self._apply("bce", (p, y), forward, backward)

    # reverse pass -------------------------------------------------------------

    def backward(self, loss):
        if loss.value.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 loss, got {loss.value.shape}")
        if not np.isfinite(loss.value[0, 0]):
            raise NonFiniteError(f"loss is {loss.value[0, 0]}")
        for rec in self.records:
            rec.output.grad = None
        for leaf in self.leaves:
            leaf.grad = np.zeros_like(leaf.value)
        loss.grad = np.ones((1, 1))
        for rec in reversed(self.records):
            g = rec.output.grad
            if g is None or not rec.output.requires_grad:
                continue
            values = [x.value for x in rec.inputs]
            grads = rec.backward(g, *values, rec.output.value)
            for x, gx in zip(rec.inputs, grads):
                if not x.requires_grad:
                    continue
                x.grad = gx if x.grad is None else x.grad + gx
        return {leaf.name: leaf.grad for leaf in self.leaves}

    def replay(self):
        """Recompute every step from its recorded inputs; True if all outputs match bitwise."""
        for rec in self.records:
            again = rec.forward(*(x.value for x in rec.inputs))
            if again.shape != rec.output.value.shape or again.tobytes() != rec.output.value.tobytes():
                return False
        return True


# -- gradient check ----------------------------------------------------------


def grad_check(loss_fn, params, eps=1e-5):
    """Compare tape gradients with central finite differences.

    ``loss_fn(tape, leaves)`` builds the loss on ``tape`` from the dict of
    parameter leaves and returns a 1x1 ``Var``. Returns the largest
    ``|g_tape - g_fd| / max(1, |g_fd|)`` over every parameter entry.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values):
        tape = Tape()
        leaves = {k: tape.param(v, name=k) for k, v in values.items()}
        loss = loss_fn(tape, leaves)
        value = float(loss.value[0, 0])
        if not np.isfinite(value):
            raise NonFiniteError(f"loss is {value}")
        return tape, loss, value

    tape, loss, _ = evaluate(params)
    analytic = tape.backward(loss)

    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        g_tape = analytic[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            _, _, up = evaluate(params)
            flat[i] = saved - eps
            _, _, down = evaluate(params)
            flat[i] = saved
            g_fd = (up - down) / (2.0 * eps)
            worst = max(worst, abs(g_tape[i] - g_fd) / max(1.0, abs(g_fd)))
    return worst


# -- checkpoint container ----------------------------------------------------

_MAGIC = b"PKGTENS1"


def save_tensors(path, tensors, meta=None):
    """Write named tensors: magic, u64 header length, JSON header, float64 LE payloads."""
    header = {
        "meta": meta or {},
        "tensors": [{"name": name, "shape": list(np.shape(t))} for name, t in tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for t in tensors.values():
        buf.write(np.ascontiguousarray(t, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_tensors(path):
    """Inverse of :func:`save_tensors`; returns ``(tensors, meta)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not a tensor checkpoint")
    offset = len(_MAGIC)
    try:
        (size,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        header = json.loads(data[offset : offset + size].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    offset += size
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']!r}")
        tensors[entry["name"]] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return tensors, header["meta"]
