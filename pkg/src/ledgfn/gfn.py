"""GFlowNet policy model, trajectory sampling and the balance objectives.

All balance losses share one formulation. For a path ``s_0 .. s_T`` define per
transition ``x_t = log P_F(a_t|s_t) - log P_B(a_t|s_{t+1}) + g_t`` where
``g_t`` is a credit term, and per state ``d_i = log F(s_i) - sum_{t<i} x_t``.
A (sub-)trajectory ``U -> V`` is balanced when ``d_U - d_V = 0``:

* plain DB/TB/subTB: ``g`` is zero except the terminal transition, which carries
  the terminal energy; the terminal flow is the constant 0,
* forward-looking: ``g_t`` is the energy gain between consecutive states,
* learned decomposition: ``g_t`` is the assigned potential.

``log F(s_0)`` is always the learnable scalar ``log_z``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import MlpParams, SeededRng, Tape, init_mlp
from .envs.base import Environment, Trajectory
from .envs.enumerate import DEFAULT_LIMIT, states_by_rank
from .exceptions import ConfigError, ContractError, EnvironmentContractError


class ObjectiveKind(str, enum.Enum):
    DB = "DB"
    TB = "TB"
    SubTB = "SubTB"
    FL_DB = "FL_DB"
    FL_SubTB = "FL_SubTB"
    LED_DB = "LED_DB"
    LED_SubTB = "LED_SubTB"

    @property
    def is_fl(self) -> bool:
        return self.name.startswith("FL_")

    @property
    def is_led(self) -> bool:
        return self.name.startswith("LED_")

    @property
    def family(self) -> str:
        return {"DB": "db", "TB": "tb"}.get(self.name.split("_")[-1], "subtb")

    @classmethod
    def parse(cls, value) -> "ObjectiveKind":
        if isinstance(value, cls):
            return value
        for kind in cls:
            if kind.value.lower() == str(value).lower():
                return kind
        raise ConfigError(f"unknown objective {value!r}; expected one of {[k.value for k in cls]}")


class PolicyModel:
    """Shared trunk with forward-logit, backward-logit and flow heads, plus ``log_z``.

    The network output row for a state is ``[P_F logits | P_B logits | log F]``.
    """

    def __init__(self, encoding_dim, action_count, hidden=(16, 16), rng=None,
                 activation="leaky_relu", name="policy"):
        rng = rng if rng is not None else SeededRng(0)
        self.action_count = int(action_count)
        self.net: MlpParams = init_mlp(
            [encoding_dim, *hidden, 2 * self.action_count + 1], rng, activation, name)
        self.log_z = np.zeros(())

    @classmethod
    def for_env(cls, env: Environment, hidden=(16, 16), rng=None, activation="leaky_relu"):
        return cls(env.encoding_dim, env.action_count, hidden, rng, activation)

    @property
    def out_dim(self) -> int:
        return 2 * self.action_count + 1

    def parameters(self) -> dict[str, np.ndarray]:
        params = self.net.parameters()
        params["log_z"] = self.log_z
        return params

    def load(self, params) -> None:
        self.net.load(params)
        self.log_z = np.asarray(params["log_z"], dtype=np.float64).reshape(())

    def forward_log_probs(self, enc, fmask) -> np.ndarray:
        """Masked log P_F rows (tape-free); masked entries are -inf."""
        logits = self.net(enc)[:, : self.action_count]
        return _masked_log_softmax_np(logits, fmask)

    def backward_log_probs(self, enc, bmask) -> np.ndarray:
        logits = self.net(enc)[:, self.action_count: 2 * self.action_count]
        return _masked_log_softmax_np(logits, bmask)


def _masked_log_softmax_np(logits, mask):
    z = np.where(mask, logits, -np.inf)
    m = z.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))


@dataclass
class ExplorationPolicy:
    epsilon: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"exploration epsilon must lie in [0, 1], got {self.epsilon}")


# --- sampling ------------------------------------------------------------


def sample_trajectories(env: Environment, model: PolicyModel, n: int, exploration=0.0,
                        rng: SeededRng | None = None, oracle=None) -> list[Trajectory]:
    """Roll out ``n`` trajectories in lockstep.

    With probability ``epsilon`` an action is uniform over the valid ones,
    otherwise it is drawn from P_F. Each terminal is scored once through
    ``oracle`` (uncounted expected-reward energy when ``oracle`` is None).
    """
    eps = exploration.epsilon if isinstance(exploration, ExplorationPolicy) else float(exploration)
    ExplorationPolicy(eps)
    rng = rng if rng is not None else SeededRng(0)
    root = env.initial_state()
    paths = [[root] for _ in range(n)]
    actions = [[] for _ in range(n)]
    enc_rows = [[] for _ in range(n)]
    fmask_rows = [[] for _ in range(n)]
    active = list(range(n))
    current = [root] * n
    while active:
        states = [current[i] for i in active]
        enc = env.encode_batch(states)
        fmask = np.stack([env.forward_mask(s) for s in states])
        valid_count = fmask.sum(axis=1)
        if (valid_count == 0).any():
            bad = states[int(np.argmin(valid_count))]
            raise EnvironmentContractError(f"non-terminal state {bad!r} has no valid action")
        probs = np.exp(model.forward_log_probs(enc, fmask))
        explore = rng.random(len(active)) < eps
        u = rng.random(len(active))
        uniform = fmask / valid_count[:, None]
        p = np.where(explore[:, None], uniform, probs)
        cum = np.cumsum(p, axis=1)
        chosen = np.argmax(cum > (u * cum[:, -1])[:, None], axis=1)
        still = []
        for row, i in enumerate(active):
            a = int(chosen[row])
            nxt = env.step(current[i], a)
            enc_rows[i].append(enc[row])
            fmask_rows[i].append(fmask[row])
            actions[i].append(a)
            paths[i].append(nxt)
            current[i] = nxt
            if not env.is_terminal(nxt):
                still.append(i)
        active = still

    out = []
    for i in range(n):
        x = paths[i][-1]
        if oracle is not None:
            energy, realized = oracle.evaluate_terminal(x)
        else:
            realized = env.expected_reward(x)
            energy = -env.reward_exponent * np.log(realized)
        enc = np.vstack([np.asarray(enc_rows[i]), env.encode(x)[None, :]])
        fmask = np.vstack([np.asarray(fmask_rows[i]), np.zeros((1, env.action_count), bool)])
        bmask = np.stack([env.backward_mask(s) for s in paths[i]])
        out.append(Trajectory(paths[i], actions[i], float(energy), float(realized), enc, fmask, bmask))
    return out


def sample_trajectory(env, model, exploration=0.0, rng=None, oracle=None) -> Trajectory:
    return sample_trajectories(env, model, 1, exploration, rng, oracle)[0]


def transition(env: Environment, state, action: int, terminal_energy=float("nan")) -> Trajectory:
    """One-step path segment ``state --action--> next`` usable by the DB-style losses."""
    if env.is_terminal(state) or not env.forward_mask(state)[action]:
        raise ContractError(f"action {action} is not valid at {state!r}")
    nxt = env.step(state, action)
    if env.is_terminal(nxt) and not np.isfinite(terminal_energy):
        raise ContractError("a transition into a terminal state needs its terminal energy")
    return Trajectory([state, nxt], [action], float(terminal_energy), float("nan")).prepare(env)


# --- batched balance losses ----------------------------------------------


@dataclass
class BatchLayout:
    """Index structures for a batch of paths, stacked state-major."""

    enc: np.ndarray
    fmask: np.ndarray
    bmask: np.ndarray
    initial: np.ndarray
    terminal: np.ndarray
    src: np.ndarray
    act: np.ndarray
    state_start: np.ndarray
    trans_start: np.ndarray
    lengths: np.ndarray
    prefix_pos: np.ndarray

    @property
    def n_states(self):
        return self.enc.shape[0]

    @classmethod
    def build(cls, env: Environment, trajectories) -> "BatchLayout":
        if not trajectories:
            raise ContractError("empty trajectory batch")
        for t in trajectories:
            t.prepare(env)
        lengths = np.array([t.length for t in trajectories])
        if (lengths < 1).any():
            raise ContractError("paths must contain at least one transition")
        state_start = np.concatenate([[0], np.cumsum(lengths + 1)[:-1]])
        trans_start = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        initial = np.concatenate([[env.is_initial(s) for s in t.states] for t in trajectories])
        terminal = np.concatenate([[env.is_terminal(s) for s in t.states] for t in trajectories])
        src = np.concatenate([state_start[b] + np.arange(n) for b, n in enumerate(lengths)])
        act = np.concatenate([np.asarray(t.actions, dtype=np.intp) for t in trajectories])
        # state k of path b sits after k transitions: its prefix-sum slot is trans_start[b] + k
        prefix_pos = np.concatenate([trans_start[b] + np.arange(n + 1) for b, n in enumerate(lengths)])
        return cls(
            enc=np.vstack([t.enc for t in trajectories]),
            fmask=np.vstack([t.fmask for t in trajectories]),
            bmask=np.vstack([t.bmask for t in trajectories]),
            initial=initial, terminal=terminal, src=src, act=act,
            state_start=state_start, trans_start=trans_start, lengths=lengths,
            prefix_pos=prefix_pos,
        )


def plain_gains(trajectories) -> list[np.ndarray]:
    """Credit for plain DB/TB/subTB: terminal energy on the terminal transition."""
    out = []
    for t in trajectories:
        g = np.zeros(t.length)
        if np.isfinite(t.terminal_energy):
            g[-1] = t.terminal_energy
        out.append(g)
    return out


def _state_potentials(model: PolicyModel, layout: BatchLayout, gains, tape: Tape):
    """The per-state quantity ``d`` (see module docstring) on ``tape``."""
    A = model.action_count
    params = tape.params(model.parameters())
    out = dc.forward_mlp(model.net, layout.enc, tape)
    n = layout.n_states
    pad = np.zeros((n, model.out_dim - 2 * A), dtype=bool)
    none = np.zeros((n, A), dtype=bool)
    fwd = dc.log_softmax_masked(out, np.hstack([layout.fmask, none, pad]))
    bwd = dc.log_softmax_masked(out, np.hstack([none, layout.bmask, pad]))
    width = model.out_dim
    log_pf = dc.take(fwd, layout.src * width + layout.act)
    log_pb = dc.take(bwd, (layout.src + 1) * width + A + layout.act)
    x = log_pf - log_pb + np.concatenate(gains)
    prefix = dc.cumsum_exclusive(x)

    flow = dc.take(out, np.arange(n) * width + 2 * A)
    interior = (~layout.initial & ~layout.terminal).astype(np.float64)
    log_flow = flow * interior + params["log_z"] * layout.initial.astype(np.float64)
    return log_flow - dc.take(prefix, layout.prefix_pos), log_pf, log_pb


def _pairs(layout: BatchLayout, family: str, subtb_lambda: float):
    """Pair indices ``(U, V)`` into the stacked states and their loss weights."""
    iu, iv, w = [], [], []
    n_paths = len(layout.lengths)
    if family == "db":
        src = layout.src
        return src, src + 1, np.full(src.size, 1.0 / src.size)
    if family == "tb":
        for b, T in enumerate(layout.lengths):
            if not (layout.initial[layout.state_start[b]] and layout.terminal[layout.state_start[b] + T]):
                raise ContractError("trajectory balance needs complete trajectories")
        start = layout.state_start
        return start, start + layout.lengths, np.full(n_paths, 1.0 / n_paths)
    if not 0.0 < subtb_lambda <= 1.0:
        raise ConfigError(f"subtb_lambda must lie in (0, 1], got {subtb_lambda}")
    for b, T in enumerate(layout.lengths):
        u, v = np.triu_indices(T + 1, k=1)
        weights = subtb_lambda ** (v - u).astype(np.float64)
        base = layout.state_start[b]
        iu.append(base + u)
        iv.append(base + v)
        w.append(weights / weights.sum() / n_paths)
    return np.concatenate(iu), np.concatenate(iv), np.concatenate(w)


def balance_loss(model: PolicyModel, env: Environment, trajectories, gains, tape: Tape,
                 family="db", subtb_lambda=0.9):
    """Weighted mean of squared balance residuals for the chosen objective family."""
    layout = BatchLayout.build(env, trajectories)
    if len(gains) != len(trajectories) or any(len(g) != t.length for g, t in zip(gains, trajectories)):
        raise ContractError("one credit value per transition is required")
    d, _, _ = _state_potentials(model, layout, [np.asarray(g, dtype=np.float64) for g in gains], tape)
    iu, iv, w = _pairs(layout, family, subtb_lambda)
    r = dc.take(d, iu) - dc.take(d, iv)
    return dc.total(dc.square(r) * w)


def balance_residuals(model, env, trajectories, gains, family="db", subtb_lambda=0.9) -> np.ndarray:
    """Plain residual values ``d_U - d_V`` for inspection and tests."""
    tape = Tape()
    layout = BatchLayout.build(env, trajectories)
    d, _, _ = _state_potentials(model, layout, [np.asarray(g, dtype=np.float64) for g in gains], tape)
    iu, iv, _ = _pairs(layout, family, subtb_lambda)
    return d.value[iu] - d.value[iv]


def db_loss(model, env, trajectories, tape):
    return balance_loss(model, env, trajectories, plain_gains(trajectories), tape, "db")


def tb_loss(model, env, trajectories, tape):
    return balance_loss(model, env, trajectories, plain_gains(trajectories), tape, "tb")


def subtb_loss(model, env, trajectories, tape, subtb_lambda=0.9):
    return balance_loss(model, env, trajectories, plain_gains(trajectories), tape, "subtb", subtb_lambda)


def fl_energy_gains(oracle, trajectories, memoize=True) -> list[np.ndarray]:
    """Energy gains ``E(s_{t+1}) - E(s_t)`` along each path.

    Every state is scored through the oracle's intermediate path; with
    ``memoize`` repeated states within the batch are scored once. The last
    transition of a complete trajectory also carries ``E(x) - E_partial(x)``
    so the gains telescope to the terminal energy.
    """
    env = oracle.env
    if not env.has_intermediate_energy:
        raise ConfigError(f"environment {env.name!r} defines no intermediate energy")
    memo = {}
    out = []
    for t in trajectories:
        energies = np.empty(len(t.states))
        for i, s in enumerate(t.states):
            if memoize and s in memo:
                energies[i] = memo[s]
            else:
                energies[i] = oracle.intermediate_energy(s)
                memo[s] = energies[i]
        g = np.diff(energies)
        if env.is_terminal(t.states[-1]):
            g[-1] += t.terminal_energy - energies[-1]
        out.append(g)
    return out


def fl_db_loss(model, env, trajectories, oracle, tape, memoize=True):
    return balance_loss(model, env, trajectories, fl_energy_gains(oracle, trajectories, memoize), tape, "db")


def fl_subtb_loss(model, env, trajectories, oracle, tape, subtb_lambda=0.9, memoize=True):
    gains = fl_energy_gains(oracle, trajectories, memoize)
    return balance_loss(model, env, trajectories, gains, tape, "subtb", subtb_lambda)


# --- exact marginal ------------------------------------------------------


def exact_policy_distribution(env: Environment, model: PolicyModel, limit=DEFAULT_LIMIT) -> dict:
    """Terminal distribution of P_F, by pushing probability mass through the DAG."""
    mass = {env.initial_state(): 1.0}
    result = {}
    for layer in states_by_rank(env, limit):
        inner = [s for s in layer if not env.is_terminal(s) and mass.get(s, 0.0) > 0.0]
        for s in layer:
            if env.is_terminal(s):
                key = env.key(s)
                result[key] = result.get(key, 0.0) + mass.pop(s, 0.0)
        if not inner:
            continue
        fmask = np.stack([env.forward_mask(s) for s in inner])
        probs = np.exp(model.forward_log_probs(env.encode_batch(inner), fmask))
        for row, s in enumerate(inner):
            m = mass.pop(s)
            for a in np.flatnonzero(fmask[row]):
                child = env.step(s, int(a))
                mass[child] = mass.get(child, 0.0) + m * probs[row, a]
    return result
