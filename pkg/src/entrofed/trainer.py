"""Federated training loops.

One round: sample clients, collect start-of-round losses, gate on the fair
angle, run local SGD (plain or gradient-aligned), aggregate with the
configured weights, apply the server step, and emit telemetry. Three
methods share the plumbing:

* ``fedavg``   -- fixed uniform or data-ratio weights, no alignment;
* ``qffl``     -- loss-power reweighting with a normalized server step;
* ``fedeba_plus`` -- entropy-based weights from end-of-round losses plus
  model alignment (plain branch) or gradient alignment (fair-angle branch).

All randomness flows through per-(round, client) streams derived from the
run seed, so trajectories are bit-reproducible, identical across methods
that share a seed, and independent of client execution order. Per-round
client work could run in parallel; rounds themselves are sequential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from entrofed.aggregation import (
    EbaConfig,
    QfflConfig,
    data_ratio_weights,
    eba_weights,
    qffl_server_step,
    schedule_tau,
    uniform_weights,
)
from entrofed.analysis import evaluate_fairness
from entrofed.core import SeededRng, chi_square_divergence, fair_angle
from entrofed.objectives import LocalObjective

_METHODS = ("fedavg", "qffl", "fedeba_plus")

# derivation tags for trainer-owned random streams
_TAG_SAMPLING = 101
_TAG_LOCAL = 102


@dataclass(frozen=True)
class TrainerConfig:
    """All federated hyperparameters for one training run.

    theta is the fair-angle threshold in radians (the CLI layer converts
    from degrees); batch_size None means full-batch local steps.
    """

    rounds: int
    local_steps: int
    clients_per_round: int
    local_lr: float
    global_lr: float = 1.0
    alpha: float = 0.5
    theta: float = math.pi
    eba: EbaConfig = field(default_factory=EbaConfig)
    qffl: QfflConfig = field(default_factory=QfflConfig)
    batch_size: int | None = None
    method: str = "fedeba_plus"
    seed: int = 0
    k_percent: float = 5.0

    def __post_init__(self):
        if self.rounds < 1 or self.local_steps < 1 or self.clients_per_round < 1:
            raise ValueError("rounds, local_steps and clients_per_round must be >= 1")
        if not self.local_lr > 0 or not self.global_lr > 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not 0.0 <= self.theta <= math.pi:
            raise ValueError("theta must be in [0, pi] radians")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None for full batch")
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}")


@dataclass(frozen=True)
class Client:
    """A participant: training objective plus an optional held-out test
    objective (defaults to evaluating on the training objective)."""

    objective: LocalObjective
    test_objective: LocalObjective | None = None

    @property
    def eval_objective(self) -> LocalObjective:
        return self.test_objective if self.test_objective is not None else self.objective


@dataclass(frozen=True)
class Federation:
    """Fixed set of clients sharing one parameter dimension."""

    clients: tuple[Client, ...]

    def __post_init__(self):
        clients = tuple(self.clients)
        if not clients:
            raise ValueError("federation needs at least one client")
        dims = {c.objective.dimension for c in clients}
        if len(dims) != 1:
            raise ValueError("all client objectives must share one dimension")
        object.__setattr__(self, "clients", clients)

    @property
    def m(self) -> int:
        return len(self.clients)

    @property
    def dimension(self) -> int:
        return self.clients[0].objective.dimension

    @property
    def sizes(self) -> np.ndarray:
        return np.array([c.objective.full_size for c in self.clients], dtype=np.float64)


@dataclass(frozen=True)
class UpdatePacket:
    """What a client sends back after local training."""

    client_id: int
    delta: np.ndarray
    one_step_delta: np.ndarray | None
    start_loss: float
    end_loss: float
    n_samples: int


@dataclass(frozen=True)
class RoundReport:
    """Per-round telemetry.

    Angle and weights describe the round's internals (start losses of the
    sampled clients, aggregation weights actually used); the loss/accuracy
    statistics are evaluated at the post-update model. Accuracy fields are
    NaN for federations without classifier clients.
    """

    round_index: int
    tau: float
    angle: float
    branch: str
    sampled: np.ndarray
    weights: np.ndarray
    global_train_loss: float
    global_grad_norm: float
    test_losses: np.ndarray
    test_accuracies: np.ndarray
    loss_variance: float
    accuracy_variance: float
    worst_tail_accuracy: float
    best_tail_accuracy: float
    global_accuracy: float
    chi_square: float
    extra_comm: bool


def sample_clients(m: int, n: int, rng: SeededRng) -> np.ndarray:
    """n distinct client ids drawn uniformly without replacement."""
    if not 1 <= n <= m:
        raise ValueError(f"cannot sample {n} of {m} clients")
    return rng.sample_without_replacement(m, n)


def compute_fair_gradient(grads, losses, tau: float) -> np.ndarray:
    """Softmax-weighted combination of start-of-round client gradients."""
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    losses = np.asarray(losses, dtype=np.float64)
    if len(grads) != losses.size or losses.size == 0:
        raise ValueError("need one gradient per loss")
    weights = eba_weights(losses, tau)
    out = np.zeros_like(grads[0])
    for w, g in zip(weights, grads):
        if g.shape != out.shape:
            raise ValueError("gradient dimension mismatch")
        out += w * g
    return out


class _BatchStream:
    """Without-replacement minibatch indices, reshuffled every epoch.

    batch_size None (or >= n) yields None, meaning full-batch evaluation.
    A ragged final batch is folded into the next epoch's shuffle so every
    step sees the same batch size.
    """

    def __init__(self, n: int, batch_size: int | None, rng: SeededRng | None):
        self.n = n
        self.batch = None if batch_size is None or batch_size >= n else int(batch_size)
        self.rng = rng
        self._order: np.ndarray | None = None
        self._pos = 0
        if self.batch is not None and rng is None:
            raise ValueError("minibatching requires a SeededRng")

    def next(self) -> np.ndarray | None:
        if self.batch is None:
            return None
        if self._order is None or self._pos + self.batch > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        out = self._order[self._pos : self._pos + self.batch]
        self._pos += self.batch
        return out


def local_sgd(
    objective: LocalObjective,
    x_start: np.ndarray,
    steps: int,
    lr: float,
    batch_size: int | None = None,
    rng: SeededRng | None = None,
    client_id: int = 0,
) -> UpdatePacket:
    """K local gradient steps; records the full and one-step displacements
    plus full-batch loss snapshots before and after."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x_start = np.asarray(x_start, dtype=np.float64)
    x = x_start.copy()
    start_loss = objective.loss(x)
    stream = _BatchStream(objective.full_size, batch_size, rng)
    one_step = None
    for k in range(steps):
        x = x - lr * objective.gradient(x, stream.next())
        if k == 0:
            one_step = x - x_start
    return UpdatePacket(
        client_id=client_id,
        delta=x - x_start,
        one_step_delta=one_step,
        start_loss=start_loss,
        end_loss=objective.loss(x),
        n_samples=objective.full_size,
    )


def local_sgd_aligned(
    objective: LocalObjective,
    x_start: np.ndarray,
    steps: int,
    lr: float,
    alpha: float,
    fair_grad: np.ndarray,
    batch_size: int | None = None,
    rng: SeededRng | None = None,
    client_id: int = 0,
) -> UpdatePacket:
    """Local steps along (1 - alpha) * local gradient + alpha * fair
    gradient, with the fair gradient held fixed for the whole round. The
    one-step displacement is not collected on this branch."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    x_start = np.asarray(x_start, dtype=np.float64)
    fair_grad = np.asarray(fair_grad, dtype=np.float64)
    if fair_grad.shape != x_start.shape:
        raise ValueError("fair gradient dimension mismatch")
    x = x_start.copy()
    start_loss = objective.loss(x)
    stream = _BatchStream(objective.full_size, batch_size, rng)
    for _ in range(steps):
        g = objective.gradient(x, stream.next())
        x = x - lr * ((1.0 - alpha) * g + alpha * fair_grad)
    return UpdatePacket(
        client_id=client_id,
        delta=x - x_start,
        one_step_delta=None,
        start_loss=start_loss,
        end_loss=objective.loss(x),
        n_samples=objective.full_size,
    )


def _stack_deltas(packets, attr: str) -> np.ndarray:
    rows = []
    dim = None
    for pk in packets:
        vec = getattr(pk, attr)
        if vec is None:
            raise ValueError(f"packet from client {pk.client_id} is missing {attr}")
        vec = np.asarray(vec, dtype=np.float64)
        if dim is None:
            dim = vec.shape
        elif vec.shape != dim:
            raise ValueError("packet dimension mismatch")
        rows.append(vec)
    return np.stack(rows)


def aggregate_plain(packets, p) -> np.ndarray:
    """Weighted sum of client displacements."""
    if not packets:
        raise ValueError("need at least one packet")
    p = np.asarray(p, dtype=np.float64)
    if p.size != len(packets):
        raise ValueError("one weight per packet required")
    return p @ _stack_deltas(packets, "delta")


def aggregate_model_alignment(packets, p, alpha: float) -> np.ndarray:
    """Blend the weighted aggregate of full local updates with the plain
    average of one-step local updates: (1-a) sum p_i d_i + a mean(d1_i)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    weighted = aggregate_plain(packets, p)
    one_step = _stack_deltas(packets, "one_step_delta").mean(axis=0)
    return (1.0 - alpha) * weighted + alpha * one_step


def server_update(x_t: np.ndarray, delta: np.ndarray, lr: float) -> np.ndarray:
    """x_{t+1} = x_t + lr * delta."""
    x_t = np.asarray(x_t, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != x_t.shape:
        raise ValueError("update dimension mismatch")
    return x_t + lr * delta


def _gate_angle(losses: np.ndarray) -> float:
    # An all-zero loss vector has no direction; treat it as perfectly fair.
    if np.all(losses == 0.0):
        return 0.0
    return fair_angle(losses)


def _chi_square_or_inf(weights: np.ndarray) -> float:
    if np.any(weights <= 0.0):
        return float("inf")
    return chi_square_divergence(uniform_weights(weights.size), weights)


def _fixed_weights(cfg: TrainerConfig, sizes: np.ndarray) -> np.ndarray:
    if cfg.eba.prior == "data_ratio":
        return data_ratio_weights(sizes)
    return uniform_weights(sizes.size)


def _round_weights(cfg: TrainerConfig, end_losses: np.ndarray, sizes: np.ndarray, tau: float) -> np.ndarray:
    prior = data_ratio_weights(sizes) if cfg.eba.prior == "data_ratio" else None
    return eba_weights(end_losses, tau, prior)


def _finish_round(
    federation: Federation,
    cfg: TrainerConfig,
    round_index: int,
    x_next: np.ndarray,
    sampled: np.ndarray,
    tau: float,
    angle: float,
    aligned: bool,
    weights: np.ndarray,
) -> RoundReport:
    train_losses = np.array([c.objective.loss(x_next) for c in federation.clients])
    grad_mean = np.mean(
        [c.objective.gradient(x_next) for c in federation.clients], axis=0
    )
    fairness = evaluate_fairness(
        [c.eval_objective for c in federation.clients], x_next, cfg.k_percent
    )
    return RoundReport(
        round_index=round_index,
        tau=tau,
        angle=angle,
        branch="aligned" if aligned else "plain",
        sampled=sampled,
        weights=weights,
        global_train_loss=float(train_losses.mean()),
        global_grad_norm=float(np.linalg.norm(grad_mean)),
        test_losses=fairness.test_losses,
        test_accuracies=fairness.test_accuracies,
        loss_variance=fairness.loss_variance,
        accuracy_variance=fairness.accuracy_variance,
        worst_tail_accuracy=fairness.worst_tail_accuracy,
        best_tail_accuracy=fairness.best_tail_accuracy,
        global_accuracy=fairness.global_accuracy,
        chi_square=_chi_square_or_inf(weights),
        extra_comm=aligned,
    )


def run_round(
    federation: Federation,
    x_t: np.ndarray,
    cfg: TrainerConfig,
    round_index: int,
    rng: SeededRng,
) -> tuple[np.ndarray, RoundReport]:
    """One entropy-weighted round with the fair-angle gate.

    Start losses of the sampled clients set the angle. Above the threshold,
    clients receive the fair gradient (softmax of start losses applied to
    full-batch start gradients, one extra communication) and train with
    gradient alignment; otherwise they run plain local SGD and the server
    blends in the mean one-step update. Either way the aggregation weights
    come from end-of-round local losses at the scheduled temperature.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    sampled = sample_clients(
        federation.m, cfg.clients_per_round, rng.derive(_TAG_SAMPLING, round_index)
    )
    objectives = [federation.clients[i].objective for i in sampled]
    sizes = np.array([obj.full_size for obj in objectives], dtype=np.float64)
    start_losses = np.array([obj.loss(x_t) for obj in objectives])
    angle = _gate_angle(start_losses)
    tau = schedule_tau(cfg.eba, round_index)
    aligned = angle > cfg.theta

    if aligned:
        start_grads = [obj.gradient(x_t) for obj in objectives]
        fair_grad = compute_fair_gradient(start_grads, start_losses, tau)
        packets = [
            local_sgd_aligned(
                obj,
                x_t,
                cfg.local_steps,
                cfg.local_lr,
                cfg.alpha,
                fair_grad,
                cfg.batch_size,
                rng.derive(_TAG_LOCAL, round_index, int(cid)),
                client_id=int(cid),
            )
            for cid, obj in zip(sampled, objectives)
        ]
        weights = _round_weights(
            cfg, np.array([pk.end_loss for pk in packets]), sizes, tau
        )
        delta = aggregate_plain(packets, weights)
    else:
        packets = [
            local_sgd(
                obj,
                x_t,
                cfg.local_steps,
                cfg.local_lr,
                cfg.batch_size,
                rng.derive(_TAG_LOCAL, round_index, int(cid)),
                client_id=int(cid),
            )
            for cid, obj in zip(sampled, objectives)
        ]
        weights = _round_weights(
            cfg, np.array([pk.end_loss for pk in packets]), sizes, tau
        )
        delta = aggregate_model_alignment(packets, weights, cfg.alpha)

    x_next = server_update(x_t, delta, cfg.global_lr)
    report = _finish_round(
        federation, cfg, round_index, x_next, sampled, tau, angle, aligned, weights
    )
    return x_next, report


def _run_round_fedavg(
    federation: Federation,
    x_t: np.ndarray,
    cfg: TrainerConfig,
    round_index: int,
    rng: SeededRng,
) -> tuple[np.ndarray, RoundReport]:
    sampled = sample_clients(
        federation.m, cfg.clients_per_round, rng.derive(_TAG_SAMPLING, round_index)
    )
    objectives = [federation.clients[i].objective for i in sampled]
    sizes = np.array([obj.full_size for obj in objectives], dtype=np.float64)
    start_losses = np.array([obj.loss(x_t) for obj in objectives])
    packets = [
        local_sgd(
            obj,
            x_t,
            cfg.local_steps,
            cfg.local_lr,
            cfg.batch_size,
            rng.derive(_TAG_LOCAL, round_index, int(cid)),
            client_id=int(cid),
        )
        for cid, obj in zip(sampled, objectives)
    ]
    weights = _fixed_weights(cfg, sizes)
    x_next = server_update(x_t, aggregate_plain(packets, weights), cfg.global_lr)
    report = _finish_round(
        federation,
        cfg,
        round_index,
        x_next,
        sampled,
        float("nan"),
        _gate_angle(start_losses),
        False,
        weights,
    )
    return x_next, report


def _run_round_qffl(
    federation: Federation,
    x_t: np.ndarray,
    cfg: TrainerConfig,
    round_index: int,
    rng: SeededRng,
) -> tuple[np.ndarray, RoundReport]:
    sampled = sample_clients(
        federation.m, cfg.clients_per_round, rng.derive(_TAG_SAMPLING, round_index)
    )
    objectives = [federation.clients[i].objective for i in sampled]
    start_losses = np.array([obj.loss(x_t) for obj in objectives])
    packets = [
        local_sgd(
            obj,
            x_t,
            cfg.local_steps,
            cfg.local_lr,
            cfg.batch_size,
            rng.derive(_TAG_LOCAL, round_index, int(cid)),
            client_id=int(cid),
        )
        for cid, obj in zip(sampled, objectives)
    ]
    local_models = [x_t + pk.delta for pk in packets]
    x_next = qffl_server_step(x_t, local_models, start_losses, cfg.qffl)
    # Recorded weights are the normalized loss powers F_i^q (how strongly
    # each client shapes the numerator); the step itself is not a convex
    # combination of the deltas.
    powered = start_losses**cfg.qffl.q
    weights = (
        powered / powered.sum() if powered.sum() > 0 else uniform_weights(len(packets))
    )
    report = _finish_round(
        federation,
        cfg,
        round_index,
        x_next,
        sampled,
        float("nan"),
        _gate_angle(start_losses),
        False,
        weights,
    )
    return x_next, report


def run_training(
    federation: Federation,
    cfg: TrainerConfig,
    x0: np.ndarray | None = None,
    on_round=None,
) -> tuple[list[RoundReport], np.ndarray]:
    """Run cfg.rounds rounds of the configured method from x0 (zeros by
    default). Deterministic under cfg.seed; methods sharing a seed sample
    the same clients and draw the same local batches each round. When given,
    ``on_round(report, x_next)`` streams each round's telemetry and the
    post-update model to the caller."""
    x = (
        np.zeros(federation.dimension)
        if x0 is None
        else np.asarray(x0, dtype=np.float64).copy()
    )
    if x.shape != (federation.dimension,):
        raise ValueError("x0 dimension mismatch")
    root = SeededRng(cfg.seed)
    step = {
        "fedavg": _run_round_fedavg,
        "qffl": _run_round_qffl,
        "fedeba_plus": run_round,
    }[cfg.method]
    reports: list[RoundReport] = []
    for t in range(1, cfg.rounds + 1):
        x, report = step(federation, x, cfg, t, root)
        reports.append(report)
        if on_round is not None:
            on_round(report, x)
    return reports, x
