"""Small reverse-mode autodiff over numpy arrays, MLPs, Adam and seeded RNG.

Every differentiable quantity in the package is a :class:`Var` recorded on a
:class:`Tape`. Nodes are appended in evaluation order, so the tape is already
topologically sorted and :func:`backward` is a single reverse sweep.

Parameters are registered on a tape by name (``tape.param("policy.w0", W)``);
gradients come back as a ``{name: array}`` dict which plugs directly into
:func:`adam_step`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .exceptions import ConfigError, ContractError

__all__ = [
    "Tape",
    "Var",
    "backward",
    "forward_mlp",
    "init_mlp",
    "MlpParams",
    "AdamState",
    "adam_step",
    "SeededRng",
    "bernoulli_mask",
    "gradient_check",
]


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Ordered record of operations for one loss evaluation."""

    def __init__(self):
        self.nodes: list[Var] = []
        self._params: dict[str, Var] = {}

    def _record(self, value, parents=(), vjp=None) -> "Var":
        var = Var(value, self, len(self.nodes), parents, vjp)
        self.nodes.append(var)
        return var

    def constant(self, value) -> "Var":
        return self._record(np.asarray(value, dtype=np.float64))

    def param(self, name: str, value) -> "Var":
        """Register a named parameter leaf; re-registering returns the same leaf."""
        leaf = self._params.get(name)
        if leaf is None:
            leaf = self.constant(value)
            self._params[name] = leaf
        return leaf

    def params(self, values: Mapping[str, np.ndarray]) -> dict[str, "Var"]:
        return {k: self.param(k, v) for k, v in values.items()}

    @property
    def registered(self) -> dict[str, "Var"]:
        return dict(self._params)

    def lift(self, x) -> "Var":
        return x if isinstance(x, Var) else self.constant(x)


class Var:
    """A node on a tape: a float64 array plus its local gradient rule."""

    __slots__ = ("value", "tape", "index", "parents", "vjp")
    __array_priority__ = 100.0

    def __init__(self, value, tape, index, parents, vjp):
        self.value = value
        self.tape = tape
        self.index = index
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"

    def item(self) -> float:
        return float(self.value)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(self.tape.lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise NotImplementedError("division by a Var is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(self.tape.lift(other), self)

    def __getitem__(self, key):
        return getitem(self, key)

    def __pow__(self, exponent):
        if exponent != 2:
            raise NotImplementedError("only squaring is supported")
        return square(self)


# --- primitive ops -------------------------------------------------------


def _pair(a, b):
    tape = a.tape if isinstance(a, Var) else b.tape
    return tape, tape.lift(a), tape.lift(b)


def add(a, b) -> Var:
    tape, a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return tape._record(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Var:
    tape, a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return tape._record(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Var:
    tape, a, b = _pair(a, b)
    av, bv = a.value, b.value
    return tape._record(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def neg(a: Var) -> Var:
    return a.tape._record(-a.value, (a,), lambda g: (-g,))


def matmul(a, b) -> Var:
    tape, a, b = _pair(a, b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2:
        raise ContractError("matmul expects 2-D operands")

    def vjp(g):
        return g @ bv.T, av.T @ g

    return tape._record(av @ bv, (a, b), vjp)


def square(a: Var) -> Var:
    av = a.value
    return a.tape._record(av * av, (a,), lambda g: (2.0 * av * g,))


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return a.tape._record(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape._record(out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    av = a.value
    return a.tape._record(np.log(av), (a,), lambda g: (g / av,))


def leaky_relu(a: Var, slope: float = 0.01) -> Var:
    av = a.value
    scale = np.where(av > 0, 1.0, slope)
    return a.tape._record(av * scale, (a,), lambda g: (g * scale,))


def total(a: Var) -> Var:
    """Sum of all entries, as a scalar-shaped Var."""
    shape = a.shape
    return a.tape._record(
        np.asarray(a.value.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


def mean(a: Var) -> Var:
    return total(a) * (1.0 / max(a.value.size, 1))


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return a.tape._record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a: Var, key) -> Var:
    old = a.shape

    def vjp(g):
        out = np.zeros(old)
        np.add.at(out, key, g)
        return (out,)

    return a.tape._record(a.value[key], (a,), vjp)


def take(a: Var, index) -> Var:
    """Gather from the flattened value of ``a``; repeated indices accumulate."""
    index = np.asarray(index, dtype=np.intp)
    size, shape = a.value.size, a.shape

    def vjp(g):
        flat = np.bincount(index.ravel(), weights=g.ravel(), minlength=size)
        return (flat.reshape(shape),)

    return a.tape._record(a.value.reshape(-1)[index], (a,), vjp)


def cumsum_exclusive(a: Var) -> Var:
    """``[0, a0, a0+a1, ...]`` for a 1-D ``a`` (length grows by one)."""
    av = a.value.reshape(-1)
    out = np.concatenate([[0.0], np.cumsum(av)])

    def vjp(g):
        return (np.cumsum(g[1:][::-1])[::-1].reshape(a.shape),)

    return a.tape._record(out, (a,), vjp)


def log_softmax_masked(logits: Var, mask) -> Var:
    """Row-wise log-softmax over the entries where ``mask`` is true.

    Masked-out entries (and rows with no valid entry) read as 0 and carry no
    gradient, so the output is always finite.
    """
    mask = np.asarray(mask, dtype=bool)
    x = logits.value
    shifted = np.where(mask, x, -np.inf)
    row_max = shifted.max(axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x, 0.0) - row_max), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    has_valid = z > 0
    lse = row_max + np.log(np.where(has_valid, z, 1.0))
    out = np.where(mask, x - lse, 0.0)
    probs = np.where(has_valid, e / np.where(has_valid, z, 1.0), 0.0)

    def vjp(g):
        g = np.where(mask, g, 0.0)
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return logits.tape._record(out, (logits,), vjp)


ACTIVATIONS: dict[str, Callable[[Var], Var]] = {
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "linear": lambda v: v,
}

_NUMPY_ACTIVATIONS = {
    "leaky_relu": lambda x: np.where(x > 0, x, 0.01 * x),
    "tanh": np.tanh,
    "linear": lambda x: x,
}


# --- backward ------------------------------------------------------------


def backward(tape: Tape, loss: Var, params: Mapping[str, np.ndarray] | None = None):
    """Reverse sweep from a scalar ``loss``.

    Returns ``{name: gradient}`` for every parameter registered on the tape,
    plus zeros for any name in ``params`` that never reached the tape.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ContractError("loss was recorded on a different tape")
    grads: list = [None] * (loss.index + 1)
    grads[loss.index] = np.ones_like(loss.value)
    nodes = tape.nodes
    for i in range(loss.index, -1, -1):
        g = grads[i]
        node = nodes[i]
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            j = parent.index
            grads[j] = pg if grads[j] is None else grads[j] + pg

    out = {}
    for name, leaf in tape.registered.items():
        g = grads[leaf.index] if leaf.index <= loss.index else None
        out[name] = np.zeros_like(leaf.value) if g is None else np.asarray(g).reshape(leaf.shape)
    if params is not None:
        for name, value in params.items():
            out.setdefault(name, np.zeros_like(np.asarray(value, dtype=np.float64)))
    return out


# --- MLP -----------------------------------------------------------------


@dataclass
class MlpParams:
    """Dense feed-forward network; ``activation`` is applied between layers only."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "leaky_relu"
    name: str = "mlp"

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ConfigError("an MLP needs at least input and output sizes")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise ConfigError(
                    f"layer {i} shape {w.shape}/{b.shape} disagrees with layer sizes {expected}"
                )

    @property
    def parameter_count(self) -> int:
        return sum(a * b + b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{self.name}.w{i}"] = w
            out[f"{self.name}.b{i}"] = b
        return out

    def load(self, values: Mapping[str, np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = np.asarray(values[f"{self.name}.w{i}"], dtype=np.float64)
            self.biases[i] = np.asarray(values[f"{self.name}.b{i}"], dtype=np.float64)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward pass (sampling, evaluation)."""
        act = _NUMPY_ACTIVATIONS[self.activation]
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = act(h)
        return h


def init_mlp(layer_sizes, rng: "SeededRng", activation="leaky_relu", name="mlp") -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases."""
    layer_sizes = [int(n) for n in layer_sizes]
    if any(n <= 0 for n in layer_sizes):
        raise ConfigError(f"layer sizes must be positive, got {layer_sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, (fan_out,)))
    return MlpParams(layer_sizes, weights, biases, activation, name)


def forward_mlp(params: MlpParams, x, tape: Tape | None = None):
    """Forward pass recorded on ``tape``; with ``tape=None`` this is plain numpy."""
    width = (x.value if isinstance(x, Var) else np.asarray(x)).shape[-1]
    if width != params.layer_sizes[0]:
        raise ConfigError(
            f"input width {width} does not match first layer size {params.layer_sizes[0]}"
        )
    if tape is None:
        return params(x)
    h = tape.lift(x)
    vector_input = h.value.ndim == 1
    if vector_input:
        h = reshape(h, (1, -1))
    act = ACTIVATIONS[params.activation]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ tape.param(f"{params.name}.w{i}", w) + tape.param(f"{params.name}.b{i}", b)
        if i < last:
            h = act(h)
    return reshape(h, (-1,)) if vector_input else h


# --- Adam ----------------------------------------------------------------


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update. Returns ``(new_params, state)``."""
    new_params = {}
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if np.shape(g) != np.shape(p):
            raise ContractError(f"gradient for {name} has shape {np.shape(g)}, expected {np.shape(p)}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        # beta=0 makes the correction factor 1, so this also covers the moment-free case
        m_hat = m / c1 if c1 > 0 else m
        v_hat = v / c2 if c2 > 0 else v
        new_params[name] = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    state.step = t
    return new_params, state


# --- randomness ----------------------------------------------------------


class SeededRng:
    """Counter-based (Philox) generator keyed by ``(seed, stream)``.

    Separate streams never interact, so evaluation draws cannot perturb
    training draws.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream)
        seq = np.random.SeedSequence([self.seed, self.stream])
        self._gen = np.random.Generator(np.random.Philox(seq))

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def get_state(self) -> dict:
        """JSON-friendly snapshot of the generator position."""
        state = self._gen.bit_generator.state
        return _to_jsonable(state)

    def set_state(self, state: dict) -> None:
        current = self._gen.bit_generator.state
        self._gen.bit_generator.state = _from_jsonable(state, current)


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return [int(x) for x in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(obj, template):
    if isinstance(template, dict):
        return {k: _from_jsonable(obj[k], template[k]) for k in template}
    if isinstance(template, np.ndarray):
        return np.array(obj, dtype=template.dtype)
    return type(template)(obj) if template is not None else obj


def bernoulli_mask(rng: SeededRng, length: int, keep_prob: float) -> np.ndarray:
    """0/1 vector with independent entries equal to 1 with probability ``keep_prob``."""
    if not 0.0 <= keep_prob <= 1.0:
        raise ConfigError(f"keep_prob must lie in [0, 1], got {keep_prob}")
    if length < 1:
        raise ContractError(f"mask length must be >= 1, got {length}")
    return (rng.random(length) < keep_prob).astype(np.int64)


# --- verification --------------------------------------------------------


def gradient_check(params: Mapping[str, np.ndarray], loss_fn, h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn(params, tape)`` must build the loss on ``tape`` and return it.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    loss = loss_fn(params, tape)
    analytic = backward(tape, loss, params)

    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn(params, Tape()).value)
            flat[i] = orig - h
            down = float(loss_fn(params, Tape()).value)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(grad[i]), abs(numeric), 1e-12)
            worst = max(worst, abs(grad[i] - numeric) / denom)
    return worst
