"""Delayed broadcast channel and reconstruction of assumed trajectories.

Each agent broadcasts its optimal predicted state sequence once per step.
A :class:`Mailbox` records when every (sender, stamp) message becomes
visible to each receiver. Receivers pick the freshest stamp that all of
their neighbors have delivered and rebase the stamped plans to the current
time, extending the tail with the unconstrained consensus protocol.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dynamics import AgentModel
from .errors import DelayOutOfRange, DimensionMismatch, NoCommonStamp, StampMismatch
from .topology import Topology

DELAY_MODES = ("fixed", "uniform", "sequence")


@dataclass(frozen=True)
class BroadcastMessage:
    """Predicted states ``x*(stamp + k | stamp)`` for ``k = 0 .. N``."""

    sender: int
    stamp: int
    trajectory: NDArray[np.float64] = field(repr=False)

    def __post_init__(self):
        traj = np.array(self.trajectory, dtype=float)
        if traj.ndim != 2:
            raise DimensionMismatch(f"trajectory must be (N+1, n), got {traj.shape}")
        traj.setflags(write=False)
        object.__setattr__(self, "trajectory", traj)

    @property
    def horizon(self) -> int:
        return self.trajectory.shape[0] - 1


@dataclass(frozen=True)
class DelayProcess:
    """Source of communication delays ``tau(t)``.

    ``tau(0) = 0`` always; afterwards samples lie in ``[1, tau_bar]``.
    Draws are keyed on ``(seed, t)`` (and the edge in per-edge mode) so the
    realization does not depend on call order.

    Attributes:
        mode: ``"fixed"`` (always ``value``), ``"uniform"`` or ``"sequence"``.
        tau_bar: upper delay bound.
        seed: RNG seed for ``"uniform"``.
        sequence: delays for ``t = 1, 2, ...``; the last entry repeats.
        value: delay used by ``"fixed"``; defaults to ``tau_bar``.
        per_edge: draw one delay per (sender, receiver) instead of one per step.
    """

    mode: str = "uniform"
    tau_bar: int = 1
    seed: int = 0
    sequence: tuple[int, ...] = ()
    value: int | None = None
    per_edge: bool = False

    def __post_init__(self):
        if self.mode not in DELAY_MODES:
            raise ValueError(f"delay mode must be one of {DELAY_MODES}, got {self.mode!r}")
        if int(self.tau_bar) < 1:
            raise DelayOutOfRange(f"tau_bar must be >= 1, got {self.tau_bar}")
        object.__setattr__(self, "sequence", tuple(int(v) for v in self.sequence))
        if self.mode == "sequence":
            if not self.sequence:
                raise ValueError("sequence mode needs a non-empty sequence")
            for v in self.sequence:
                self._check(v)
        if self.mode == "fixed":
            self._check(self.tau_bar if self.value is None else self.value)

    def _check(self, tau: int) -> None:
        if not (1 <= tau <= self.tau_bar):
            raise DelayOutOfRange(f"delay {tau} outside [1, {self.tau_bar}]")

    def sample(self, t: int, sender: int = 0, receiver: int = 0) -> int:
        if t < 0:
            raise ValueError("time must be non-negative")
        if t == 0:
            return 0
        if self.mode == "fixed":
            return int(self.tau_bar if self.value is None else self.value)
        if self.mode == "sequence":
            return self.sequence[min(t - 1, len(self.sequence) - 1)]
        key = [int(self.seed), int(t)]
        if self.per_edge:
            key += [int(sender), int(receiver)]
        return int(np.random.default_rng(key).integers(1, self.tau_bar + 1))


class Mailbox:
    """Visibility times of broadcasts, per receiver.

    Messages from one sender to one receiver are exposed in stamp order: a
    delivery time is clamped to be no earlier than that of the previous
    message on the same link.
    """

    def __init__(self, tau_bar: int):
        self.tau_bar = int(tau_bar)
        self.messages: dict[tuple[int, int], BroadcastMessage] = {}
        self._visible: dict[tuple[int, int, int], int] = {}
        self._last: dict[tuple[int, int], tuple[int, int]] = {}

    def visible_at(self, receiver: int, sender: int, stamp: int) -> int | None:
        return self._visible.get((receiver, sender, stamp))

    def is_visible(self, receiver: int, sender: int, stamp: int, t: int) -> bool:
        vis = self._visible.get((receiver, sender, stamp))
        return vis is not None and vis <= t

    def get(self, sender: int, stamp: int) -> BroadcastMessage:
        return self.messages[(sender, stamp)]

    def visible_messages(self, receiver: int, t: int) -> list[tuple[int, int]]:
        """(sender, stamp) pairs visible to ``receiver`` at ``t``, in stamp order per sender."""
        out = [(s, st) for (r, s, st), vis in self._visible.items() if r == receiver and vis <= t]
        return sorted(out)

    def deadline_violations(self, t: int) -> list[tuple[int, int, int]]:
        """Links whose message stamped ``t - tau_bar`` (or earlier) is still invisible at ``t``."""
        late = []
        for (r, s, st), vis in self._visible.items():
            if st + self.tau_bar <= t and vis > st + self.tau_bar:
                late.append((r, s, st))
        return late


def _delay_for(delivery_delay, receiver: int) -> int:
    if isinstance(delivery_delay, Mapping):
        return int(delivery_delay[receiver])
    return int(delivery_delay)


def enqueue_broadcast(
    mailbox: Mailbox,
    message: BroadcastMessage,
    delivery_delay: int | Mapping[int, int],
    receivers: Iterable[int] = (),
) -> Mailbox:
    """Schedule ``message`` for each receiver at ``stamp + delay``.

    ``delivery_delay`` is either one delay for every receiver or a map from
    receiver to delay. The sender always sees its own message immediately.

    Raises:
        DelayOutOfRange: a delay outside ``[1, tau_bar]``, or a nonzero delay
            for the initialization broadcast at stamp 0 when 0 is expected.
    """
    stamp = message.stamp
    receivers = list(receivers)
    for r in receivers:
        d = _delay_for(delivery_delay, r)
        if d == 0 and stamp != 0:
            raise DelayOutOfRange(f"zero delay is only allowed at t=0, got stamp {stamp}")
        if d != 0 and not (1 <= d <= mailbox.tau_bar):
            raise DelayOutOfRange(f"delay {d} outside [1, {mailbox.tau_bar}]")
    mailbox.messages[(message.sender, stamp)] = message
    mailbox._visible[(message.sender, message.sender, stamp)] = stamp
    for r in receivers:
        vis = stamp + _delay_for(delivery_delay, r)
        prev = mailbox._last.get((r, message.sender))
        if prev is not None:
            if stamp <= prev[0]:
                raise StampMismatch(f"agent {message.sender} broadcast stamp {stamp} after {prev[0]}")
            vis = max(vis, prev[1])
        mailbox._visible[(r, message.sender, stamp)] = vis
        mailbox._last[(r, message.sender)] = (stamp, vis)
    return mailbox


def common_base_time(mailbox: Mailbox, receiver: int, neighbors: Sequence[int], t: int) -> int:
    """Freshest stamp in ``[t - tau_bar, t - 1]`` delivered by every neighbor.

    Raises:
        NoCommonStamp: no stamp in the window is complete.
    """
    lo = max(0, t - mailbox.tau_bar)
    for stamp in range(t - 1, lo - 1, -1):
        if (receiver, stamp) not in mailbox.messages:
            continue
        if all(mailbox.is_visible(receiver, j, stamp, t) for j in neighbors):
            return stamp
    raise NoCommonStamp(f"agent {receiver} at t={t}: no stamp in [{lo}, {t - 1}] delivered by all of {list(neighbors)}")


@dataclass(frozen=True)
class AssumedTrajectory:
    """Plan of ``owner`` rebased to time ``t``: ``values[k]`` estimates ``x(t + k)``."""

    owner: int
    base_stamp: int
    t: int
    values: NDArray[np.float64] = field(repr=False)
    n_prime: int

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1


def extension_matrix(model: AgentModel, K: ArrayLike, laplacian: ArrayLike) -> NDArray[np.float64]:
    """Stacked closed-loop matrix ``I kron A + L kron B K`` of the consensus protocol."""
    L = np.asarray(laplacian, dtype=float)
    BK = model.B @ np.asarray(K, dtype=float)
    return np.kron(np.eye(L.shape[0]), model.A) + np.kron(L, BK)


def build_assumed(
    messages: Mapping[int, BroadcastMessage],
    t: int,
    model: AgentModel,
    K: ArrayLike,
    topology: Topology,
) -> dict[int, AssumedTrajectory]:
    """Rebase stamped plans to ``t`` and extend them jointly.

    Entries ``0 .. N'`` (``N' = stamp + N - t``) are copied from the
    broadcasts. The remaining entries roll every supplied agent forward under
    ``u_j = K sum_l a_jl (x_j - x_l)``; neighbors outside the supplied set
    contribute nothing, so the rollout is exact when the set is the whole
    network.

    Raises:
        StampMismatch: the messages carry different stamps or horizons, or the
            stamp is older than the horizon.
    """
    if not messages:
        return {}
    stamps = {m.stamp for m in messages.values()}
    horizons = {m.horizon for m in messages.values()}
    if len(stamps) != 1 or len(horizons) != 1:
        raise StampMismatch(f"messages carry stamps {sorted(stamps)} and horizons {sorted(horizons)}")
    stamp = stamps.pop()
    N = horizons.pop()
    n_prime = stamp + N - t
    if n_prime < 0 or stamp > t:
        raise StampMismatch(f"stamp {stamp} cannot be rebased to t={t} with horizon {N}")
    for j, msg in messages.items():
        if msg.sender != j or msg.trajectory.shape[1] != model.n:
            raise StampMismatch(f"message keyed {j} is from agent {msg.sender} or has wrong state size")

    agents = sorted(messages)
    shift = t - stamp
    n = model.n
    table = np.empty((len(agents), N + 1, n))
    for a, j in enumerate(agents):
        table[a, : n_prime + 1] = messages[j].trajectory[shift : shift + n_prime + 1]
    if n_prime < N:
        sub = np.asarray(topology.adjacency)[np.ix_(agents, agents)]
        lap = np.diag(sub.sum(axis=1)) - sub
        F = extension_matrix(model, K, lap)
        z = table[:, n_prime].reshape(-1)
        for k in range(n_prime + 1, N + 1):
            z = F @ z
            table[:, k] = z.reshape(len(agents), n)
    out = {}
    for a, j in enumerate(agents):
        vals = table[a].copy()
        vals.setflags(write=False)
        out[j] = AssumedTrajectory(owner=j, base_stamp=stamp, t=t, values=vals, n_prime=n_prime)
    return out


def extension_inputs(
    assumed: Mapping[int, AssumedTrajectory], model: AgentModel, K: ArrayLike, topology: Topology
) -> dict[int, NDArray[np.float64]]:
    """Protocol inputs ``K sum_l a_jl (x_j - x_l)`` along the assumed trajectories, k = 0 .. N-1."""
    K = np.asarray(K, dtype=float)
    agents = sorted(assumed)
    out = {}
    for j in agents:
        vals = assumed[j].values
        gap = np.zeros_like(vals[:-1])
        for l in topology.neighbors[j]:
            if l in assumed:
                gap += topology.adjacency[j, l] * (vals[:-1] - assumed[l].values[:-1])
        out[j] = gap @ K.T
    return out
