"""Per-agent double DQN with a zero-padded task-input block.

Each agent owns one :class:`PolicyNet`: a small rectified MLP whose first
layer also sees ``d_task`` task inputs. The task inputs get their own
weight block, stored after every other parameter, so a net whose task
inputs are always zero computes exactly what the task-free net computes.

Parameters live in one flat float64 vector; per-layer arrays are views
into it. This keeps checkpoints, gradient checks and optimizer state
simple.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import defaults
from .byteio import ByteReader, ByteWriter
from .exceptions import (
    BufferExhaustedError,
    CheckpointError,
    DomainError,
    ShapeError,
    TrainingDivergedError,
    UsageError,
)


log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MCQN"
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def _param_shapes(obs_dim, hidden_sizes, action_count, d_task):
    sizes = [obs_dim] + list(hidden_sizes) + [action_count]
    shapes = []
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        shapes.append(("W{}".format(layer), (fan_in, fan_out)))
        shapes.append(("b{}".format(layer), (fan_out,)))
    if d_task:
        shapes.append(("W_task", (d_task, sizes[1])))
    return shapes


class PolicyNet(object):
    """Online and target parameters of one agent's Q-network.

    :ivar params: flat online parameter vector ``theta``.
    :ivar target_params: flat target parameter vector, same shape.
    :ivar task_slot_range: ``(start, stop)`` of the task inputs within the
        concatenated ``[obs, task]`` input.
    """

    def __init__(self, obs_dim, action_count, d_task=0,
                 hidden_sizes=defaults.DEFAULT_HIDDEN_SIZES, seed=0,
                 optimizer=defaults.DEFAULT_OPTIMIZER,
                 sync_interval=defaults.DEFAULT_TARGET_SYNC_INTERVAL,
                 grad_clip=defaults.DEFAULT_GRAD_CLIP,
                 params=None, target_params=None):
        if obs_dim < 1 or action_count < 1 or d_task < 0:
            raise DomainError("PolicyNet dimensions must be positive")
        if optimizer not in ("adam", "sgd"):
            raise DomainError("Unknown optimizer {!r}".format(optimizer))
        self.obs_dim = int(obs_dim)
        self.action_count = int(action_count)
        self.d_task = int(d_task)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.optimizer = optimizer
        self.sync_interval = int(sync_interval)
        self.grad_clip = grad_clip
        self.task_slot_range = (self.obs_dim, self.obs_dim + self.d_task)
        self._shapes = _param_shapes(self.obs_dim, self.hidden_sizes,
                                     self.action_count, self.d_task)
        self.size = sum(int(np.prod(s)) for _, s in self._shapes)
        self.core_size = self.size - (
            self.d_task * self._layer_sizes[1] if self.d_task else 0)
        self.dropout_rng = np.random.default_rng([seed, 1])
        if params is None:
            params = self._initial_params(np.random.default_rng(seed))
        self.params = np.array(params, dtype=np.float64)
        if self.params.shape != (self.size,):
            raise ShapeError("Expected {} parameters, got {}".format(
                self.size, self.params.shape))
        if target_params is None:
            target_params = self.params
        self.target_params = np.array(target_params, dtype=np.float64)
        if self.target_params.shape != self.params.shape:
            raise ShapeError("Target parameters do not match the network")
        self.update_count = 0
        self._adam_m = np.zeros(self.size)
        self._adam_v = np.zeros(self.size)

    @property
    def _layer_sizes(self):
        return [self.obs_dim] + list(self.hidden_sizes) + [self.action_count]

    @property
    def num_layers(self):
        return len(self.hidden_sizes) + 1

    def _initial_params(self, rng):
        flat = np.zeros(self.size)
        views = self.views(flat)
        for name, shape in self._shapes:
            if name.startswith("W") and name != "W_task":
                fan_in = shape[0]
                views[name][...] = rng.normal(
                    0.0, math.sqrt(2.0 / fan_in), size=shape)
        if self.d_task:
            views["W_task"][...] = rng.normal(
                0.0, math.sqrt(2.0 / self.obs_dim),
                size=views["W_task"].shape)
        return flat

    def views(self, flat=None):
        """Named array views into ``flat`` (default: the online params)."""
        flat = self.params if flat is None else flat
        out = {}
        offset = 0
        for name, shape in self._shapes:
            count = int(np.prod(shape))
            out[name] = flat[offset:offset + count].reshape(shape)
            offset += count
        return out

    def target_net(self):
        """A frozen :class:`PolicyNet` evaluating the target parameters."""
        return PolicyNet(self.obs_dim, self.action_count, self.d_task,
                         self.hidden_sizes, optimizer=self.optimizer,
                         sync_interval=self.sync_interval,
                         grad_clip=self.grad_clip,
                         params=self.target_params,
                         target_params=self.target_params)

    def sync_target(self):
        self.target_params[...] = self.params

    def clone(self):
        twin = PolicyNet(self.obs_dim, self.action_count, self.d_task,
                         self.hidden_sizes, optimizer=self.optimizer,
                         sync_interval=self.sync_interval,
                         grad_clip=self.grad_clip, params=self.params,
                         target_params=self.target_params)
        twin.update_count = self.update_count
        twin._adam_m = self._adam_m.copy()
        twin._adam_v = self._adam_v.copy()
        return twin

    def _check_inputs(self, obs, tasks):
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if obs.shape[1] != self.obs_dim:
            raise ShapeError("Observation width {} does not match {}".format(
                obs.shape[1], self.obs_dim))
        if tasks is not None:
            tasks = np.atleast_2d(np.asarray(tasks, dtype=np.float64))
            if tasks.shape[1] == 0 and self.d_task == 0:
                tasks = None
            elif tasks.shape != (obs.shape[0], self.d_task):
                raise ShapeError("Task input shape {} does not match "
                                 "({}, {})".format(tasks.shape, obs.shape[0],
                                                   self.d_task))
        return obs, tasks

    def forward(self, obs, tasks=None, dropout_rate=0.0, rng=None,
                params=None):
        """Batched Q-values plus the cache needed by :meth:`backward`."""
        obs, tasks = self._check_inputs(obs, tasks)
        if not 0.0 <= dropout_rate < 1.0:
            raise DomainError("dropout_rate must be in [0, 1)")
        views = self.views(params)
        if tasks is not None and dropout_rate > 0.0:
            rng = self.dropout_rng if rng is None else rng
            keep = rng.random(tasks.shape) >= dropout_rate
            tasks = tasks * keep / (1.0 - dropout_rate)
        inputs, pre = [], []
        x = obs
        for layer in range(self.num_layers):
            inputs.append(x)
            z = x @ views["W{}".format(layer)]
            if layer == 0 and tasks is not None:
                z = z + tasks @ views["W_task"]
            z = z + views["b{}".format(layer)]
            if layer < self.num_layers - 1:
                pre.append(z)
                x = np.maximum(z, 0.0)
            else:
                x = z
        return x, (inputs, pre, tasks)

    def backward(self, dout, cache, params=None):
        """Gradient of ``sum(dout * Q)`` with respect to the flat params."""
        inputs, pre, tasks = cache
        views = self.views(params)
        grad = np.zeros(self.size)
        gviews = self.views(grad)
        delta = dout
        for layer in reversed(range(self.num_layers)):
            gviews["W{}".format(layer)][...] = inputs[layer].T @ delta
            gviews["b{}".format(layer)][...] = delta.sum(axis=0)
            if layer == 0:
                if tasks is not None:
                    gviews["W_task"][...] = tasks.T @ delta
            else:
                delta = (delta @ views["W{}".format(layer)].T) * \
                    (pre[layer - 1] > 0.0)
        return grad


def q_forward(net, obs, task_vec=None, dropout_rate=0.0, rng=None):
    """Q-values for one observation.

    ``task_vec=None`` is the absent-task sentinel and behaves exactly
    like an all-zero task vector.
    """
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1:
        raise ShapeError("q_forward takes a single observation vector")
    tasks = None if task_vec is None else np.asarray(task_vec)[None, :]
    out, _ = net.forward(obs[None, :], tasks, dropout_rate, rng)
    return out[0]


def act_epsilon_greedy(qvalues, epsilon, rng):
    """Greedy action with probability ``1 - epsilon``, lowest index on
    ties; otherwise uniform. Always draws exactly one uniform variate
    before deciding."""
    qvalues = np.asarray(qvalues, dtype=np.float64)
    if qvalues.size == 0:
        raise DomainError("Cannot act on empty Q-values")
    if not 0.0 <= epsilon <= 1.0:
        raise DomainError("epsilon must be in [0, 1], got {}".format(
            epsilon))
    if rng.random() < epsilon:
        return int(rng.integers(qvalues.size))
    return int(np.argmax(qvalues))


def _double_dqn_targets(credits, next_obs, next_tasks, dones, gamma,
                        online, target):
    credits = np.asarray(credits, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if gamma == 0.0:
        return credits.copy()
    q_online, _ = online.forward(next_obs, next_tasks)
    best = np.argmax(q_online, axis=1)
    q_target, _ = target.forward(next_obs, next_tasks)
    bootstrap = q_target[np.arange(len(best)), best]
    return np.where(dones, credits, credits + gamma * bootstrap)


def double_dqn_target(credit, next_obs, next_task, done, gamma, online,
                      target):
    """``y = c`` if done, else ``c + gamma * Q_target(o', argmax Q_online(o'))``.

    ``target`` may be a :class:`PolicyNet` or the online net's
    :meth:`~PolicyNet.target_net`.
    """
    if not 0.0 <= gamma < 1.0:
        raise DomainError("gamma must be in [0, 1), got {}".format(gamma))
    if done:
        return float(credit)
    tasks = None if next_task is None else np.asarray(next_task)[None, :]
    y = _double_dqn_targets([credit], np.asarray(next_obs)[None, :], tasks,
                            [False], gamma, online, target)
    return float(y[0])


@dataclass(frozen=True)
class Minibatch:
    """Regression batch: Q(obs, task)[action] should approach targets."""

    obs: np.ndarray
    tasks: Optional[np.ndarray]
    actions: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return len(self.actions)


def td_loss_and_grad(net, batch, dropout_rate=0.0, rng=None, params=None):
    """Mean squared TD error and its gradient w.r.t. the flat params."""
    q, cache = net.forward(batch.obs, batch.tasks, dropout_rate, rng, params)
    rows = np.arange(len(batch))
    actions = np.asarray(batch.actions, dtype=np.int64)
    error = q[rows, actions] - np.asarray(batch.targets, dtype=np.float64)
    loss = float(np.mean(error ** 2))
    dout = np.zeros_like(q)
    dout[rows, actions] = 2.0 * error / len(batch)
    return loss, net.backward(dout, cache, params)


def _clip(net, grad):
    if not net.grad_clip:
        return grad
    core = grad[:net.core_size]
    task = grad[net.core_size:]
    norm = math.sqrt(float(np.dot(core, core)) + float(np.dot(task, task)))
    if norm > net.grad_clip:
        grad = grad * (net.grad_clip / norm)
    return grad


def apply_update(net, minibatch, learning_rate, dropout_rate=0.0, rng=None):
    """One optimizer step on the mean squared TD error.

    :returns: the loss before the step.
    :raises TrainingDivergedError: if the loss is not finite.
    """
    if len(minibatch) == 0:
        raise DomainError("Cannot update on an empty minibatch")
    loss, grad = td_loss_and_grad(net, minibatch, dropout_rate, rng)
    if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise TrainingDivergedError(
            "Non-finite TD loss {} after {} updates (max |param| {:.3g}, "
            "max |target| {:.3g})".format(
                loss, net.update_count, float(np.max(np.abs(net.params))),
                float(np.max(np.abs(minibatch.targets)))))
    grad = _clip(net, grad)
    if net.optimizer == "adam":
        beta1, beta2 = ADAM_BETAS
        step = net.update_count + 1
        net._adam_m = beta1 * net._adam_m + (1.0 - beta1) * grad
        net._adam_v = beta2 * net._adam_v + (1.0 - beta2) * grad * grad
        m_hat = net._adam_m / (1.0 - beta1 ** step)
        v_hat = net._adam_v / (1.0 - beta2 ** step)
        net.params -= learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    else:
        net.params -= learning_rate * grad
    net.update_count += 1
    if net.sync_interval and net.update_count % net.sync_interval == 0:
        net.sync_target()
    return loss


def finite_difference_gradient(net, minibatch, h=1e-5):
    """Central differences of the TD loss, one parameter at a time."""
    params = net.params.copy()
    grad = np.zeros_like(params)
    for index in range(params.size):
        saved = params[index]
        params[index] = saved + h
        plus, _ = td_loss_and_grad(net, minibatch, params=params)
        params[index] = saved - h
        minus, _ = td_loss_and_grad(net, minibatch, params=params)
        params[index] = saved
        grad[index] = (plus - minus) / (2.0 * h)
    return grad


def gradient_check(net, minibatch, h=1e-5):
    """Relative error between analytic and numeric TD-loss gradients."""
    _, analytic = td_loss_and_grad(net, minibatch)
    numeric = finite_difference_gradient(net, minibatch, h)
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


class ReplayBuffer(object):
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity, obs_dim, d_task=0):
        if capacity < 1:
            raise DomainError("Replay capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.tasks = np.zeros((capacity, d_task))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.credits = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.next_tasks = np.zeros((capacity, d_task))
        self.dones = np.zeros(capacity, dtype=bool)
        self._cursor = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, obs, task_vec, action, credit, next_obs, next_task_vec,
            done):
        i = self._cursor
        self.obs[i] = obs
        if self.tasks.shape[1]:
            self.tasks[i] = 0.0 if task_vec is None else task_vec
            self.next_tasks[i] = 0.0 if next_task_vec is None \
                else next_task_vec
        self.actions[i] = action
        self.credits[i] = credit
        self.next_obs[i] = next_obs
        self.dones[i] = done
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size, rng):
        """Uniform indices with replacement over the stored entries."""
        if self._size == 0:
            raise UsageError("Cannot sample from an empty replay buffer")
        return rng.integers(0, self._size, size=batch_size)


@dataclass(frozen=True)
class TaskInputSchedule:
    """Blanking and dropout of task inputs as training progresses."""

    dropout_max: float = defaults.DEFAULT_DROPOUT_MAX

    def __post_init__(self):
        if not 0.0 <= self.dropout_max < 1.0:
            raise DomainError("dropout_max must be in [0, 1)")

    def blank_fraction(self, progress):
        return float(_check_progress(progress))

    def dropout_rate(self, progress):
        return self.dropout_max * _check_progress(progress)


def _check_progress(progress):
    if not 0.0 <= progress <= 1.0:
        raise DomainError("progress must be in [0, 1], got {}".format(
            progress))
    return progress


def task_input_schedule(progress, schedule=None):
    """``(blank_fraction, dropout_rate)`` at ``progress`` in [0, 1]."""
    schedule = schedule or TaskInputSchedule()
    return schedule.blank_fraction(progress), schedule.dropout_rate(progress)


class DQNAgent(object):
    """One decentralized learner: online/target net plus replay buffer."""

    def __init__(self, obs_dim, action_count, d_task=0, seed=0,
                 hidden_sizes=defaults.DEFAULT_HIDDEN_SIZES,
                 gamma=defaults.DEFAULT_GAMMA,
                 learning_rate=defaults.DEFAULT_LEARNING_RATE,
                 replay_capacity=defaults.DEFAULT_REPLAY_CAPACITY,
                 minibatch_size=defaults.DEFAULT_MINIBATCH_SIZE,
                 sync_interval=defaults.DEFAULT_TARGET_SYNC_INTERVAL,
                 grad_clip=defaults.DEFAULT_GRAD_CLIP,
                 optimizer=defaults.DEFAULT_OPTIMIZER, net=None):
        if not 0.0 <= gamma < 1.0:
            raise DomainError("gamma must be in [0, 1), got {}".format(gamma))
        self.net = net or PolicyNet(
            obs_dim, action_count, d_task, hidden_sizes, seed=seed,
            optimizer=optimizer, sync_interval=sync_interval,
            grad_clip=grad_clip)
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.minibatch_size = minibatch_size
        self.buffer = ReplayBuffer(replay_capacity, self.net.obs_dim,
                                   self.net.d_task)

    @property
    def d_task(self):
        return self.net.d_task

    def act(self, obs, task_vec, epsilon, rng):
        if not self.d_task:
            task_vec = None
        return act_epsilon_greedy(q_forward(self.net, obs, task_vec),
                                  epsilon, rng)

    def update(self, rng, dropout_rate=0.0):
        """Sample a minibatch, build double-DQN targets, take one step."""
        index = self.buffer.sample(self.minibatch_size, rng)
        buf = self.buffer
        tasks = buf.tasks[index] if self.d_task else None
        next_tasks = buf.next_tasks[index] if self.d_task else None
        targets = _double_dqn_targets(
            buf.credits[index], buf.next_obs[index], next_tasks,
            buf.dones[index], self.gamma, self.net, self.net.target_net())
        batch = Minibatch(buf.obs[index], tasks, buf.actions[index], targets)
        return apply_update(self.net, batch, self.learning_rate,
                            dropout_rate if self.d_task else 0.0)


def save_checkpoint(net, sink):
    """Write ``net`` to a path or binary stream.

    Layout (little-endian): magic ``MCQN``, uint16 version, uint32
    obs_dim, action_count, d_task, hidden layer count, each hidden size,
    uint64 parameter count, then float64 params and target params.

    :returns: number of bytes written.
    """
    if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
        with open(sink, "wb") as stream:
            return save_checkpoint(net, stream)
    buffer = io.BytesIO()
    writer = ByteWriter(buffer)
    writer.write(CHECKPOINT_MAGIC)
    writer.write_uint16(defaults.CHECKPOINT_VERSION)
    for value in (net.obs_dim, net.action_count, net.d_task,
                  len(net.hidden_sizes)):
        writer.write_uint32(value)
    for size in net.hidden_sizes:
        writer.write_uint32(size)
    writer.write_uint64(net.size)
    writer.write_doubles(net.params)
    writer.write_doubles(net.target_params)
    data = buffer.getvalue()
    sink.write(data)
    return len(data)


def load_checkpoint(source, **kwargs):
    """Read a :class:`PolicyNet` written by :func:`save_checkpoint`."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "rb") as stream:
            return load_checkpoint(stream, **kwargs)
    reader = ByteReader(source)
    try:
        magic = reader.read_magic()
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError("Not a policy checkpoint (magic {!r})"
                                  .format(magic))
        version = reader.read_uint16()
        if version != defaults.CHECKPOINT_VERSION:
            raise CheckpointError("Unsupported checkpoint version {}".format(
                version))
        obs_dim, action_count, d_task, layers = (
            reader.read_uint32() for _ in range(4))
        hidden = tuple(reader.read_uint32() for _ in range(layers))
        count = reader.read_uint64()
        params = reader.read_doubles(count)
        target = reader.read_doubles(count)
    except BufferExhaustedError as exc:
        raise CheckpointError("Truncated checkpoint: {}".format(exc))
    return PolicyNet(obs_dim, action_count, d_task, hidden, params=params,
                     target_params=target, **kwargs)


def greedy_actions(agents: Sequence[DQNAgent], joint_obs):
    """Decentralized greedy joint action with zero task inputs."""
    return tuple(int(np.argmax(q_forward(agent.net, obs)))
                 for agent, obs in zip(agents, joint_obs))
