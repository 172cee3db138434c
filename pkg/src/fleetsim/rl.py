"""Model-free learner for the shared vacant-taxi policy.

The policy is tabular: ``theta`` is the row-stochastic matrix itself, kept
on the (floored) simplex by projection after every gradient step. Advantages
are Monte-Carlo tail returns minus a per-node baseline, optionally with a
random-network-distillation novelty bonus, and the policy is improved with
the clipped PPO surrogate.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .engine import DESK_HORIZON, MAX_SAMPLES, PolicyRouter, run_epoch
from .policy import PROB_FLOOR, PolicyMatrix, project_rows, random_policy, save_policy

log = logging.getLogger(__name__)

CURVE_FIELDS = ("epoch", "reward_avg", "waiting_avg", "intrinsic_mean", "loss_surrogate", "loss_value")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainerConfig:
    learning_rate: float = 0.01
    clip: float = 0.1
    iterations: int = 10
    epochs: int = 200
    exploration: bool = True
    seed: int = 0
    horizon: int = DESK_HORIZON
    taxi_count: int = 20
    max_samples: int = MAX_SAMPLES
    rnd_dim: int = 16
    sigma_mode: str = "running"
    return_mode: str = "taxi"
    baseline: str = "node-time"
    prob_floor: float = PROB_FLOOR
    gamma: float = 1.0

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.gamma != 1.0:
            raise ValueError("only the undiscounted setting (gamma = 1) is supported")
        if self.sigma_mode not in ("running", "epoch"):
            raise ValueError("sigma_mode must be 'running' or 'epoch'")
        if self.return_mode not in ("fleet", "taxi"):
            raise ValueError("return_mode must be 'fleet' or 'taxi'")
        if self.baseline not in ("node", "node-time"):
            raise ValueError("baseline must be 'node' or 'node-time'")


class Adam:
    """Plain Adam on a flat parameter vector."""

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad) -> np.ndarray:
        """Return the descent increment for ``grad`` (subtract it)."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --- returns -----------------------------------------------------------------

def tail_sums(occupancy) -> np.ndarray:
    """``out[t] = sum(occupancy[t:])``, with one trailing zero at ``t = H``."""
    occ = np.asarray(occupancy, dtype=np.int64)
    out = np.zeros(occ.size + 1, dtype=np.int64)
    out[:-1] = np.cumsum(occ[::-1])[::-1]
    return out


def extrinsic_returns(batch, mode="fleet") -> np.ndarray:
    """Undiscounted tail return of every recorded decision.

    ``"fleet"`` sums the occupied-taxi count from the decision time to the
    horizon. ``"taxi"`` counts only the deciding taxi's own occupied steps.
    """
    if mode == "fleet":
        return tail_sums(batch.occupancy)[batch.times].astype(float)
    if mode == "taxi":
        return (batch.own_final[batch.taxis] - batch.own_before).astype(float)
    raise ValueError(f"unknown return mode {mode!r}")


# --- exploration bonus -------------------------------------------------------

class RndPair:
    """Random-network distillation over one-hot (node, successor) pairs.

    Both maps are linear in the one-hot pair encoding, i.e. an embedding
    table with one ``dim``-vector per CSR slot. The target is frozen. The
    predictor is fitted by stochastic gradient descent on the squared error,
    one record at a time, so a pair's error shrinks geometrically in the
    number of times it has been visited.
    """

    def __init__(self, n_pairs, dim=16, seed=0, lr=0.01):
        if not 0 < lr < 0.5:
            raise ValueError("RND learning rate must lie in (0, 0.5)")
        target_ss, pred_ss = np.random.SeedSequence(seed).spawn(2)
        self.target = np.random.default_rng(target_ss).standard_normal((n_pairs, dim))
        self.target.setflags(write=False)
        self.predictor = np.random.default_rng(pred_ss).standard_normal((n_pairs, dim))
        self.lr = lr

    def bonus(self, slots) -> np.ndarray:
        diff = self.predictor[slots] - self.target[slots]
        return np.einsum("ij,ij->i", diff, diff)

    def loss(self, slots) -> float:
        return float(self.bonus(slots).mean())

    def train(self, slots, passes=1) -> float:
        """SGD passes over the batch; returns the batch-mean squared error after.

        The one-hot loss separates per pair, so one SGD step on a record of
        pair ``k`` multiplies that pair's error by ``1 - 2 lr``; a pass
        applies this once per record, independent of record order.
        """
        slots = np.asarray(slots)
        if slots.size == 0:
            return 0.0
        counts = np.bincount(slots, minlength=self.target.shape[0])
        shrink = (1.0 - 2.0 * self.lr) ** (counts * passes)
        self.predictor = self.target + shrink[:, None] * (self.predictor - self.target)
        return self.loss(slots)


def intrinsic_bonus(rnd: RndPair, slots) -> np.ndarray:
    return rnd.bonus(slots)


def train_predictor(rnd: RndPair, batch, passes=1) -> float:
    return rnd.train(batch.slots, passes)


class RunningSigma:
    """Sample standard deviation of every intrinsic reward seen so far."""

    def __init__(self):
        self.n = 0
        self.s1 = 0.0
        self.s2 = 0.0

    def update(self, x) -> None:
        x = np.asarray(x, dtype=float)
        self.n += x.size
        self.s1 += float(x.sum())
        self.s2 += float((x * x).sum())

    @property
    def sigma(self) -> float:
        if self.n < 2:
            return 0.0
        var = (self.n * self.s2 - self.s1 * self.s1) / (self.n * (self.n - 1))
        return float(np.sqrt(max(var, 0.0)))


def sample_sigma(x) -> float:
    acc = RunningSigma()
    acc.update(x)
    return acc.sigma


def combine_rewards(extrinsic, intrinsic, sigma) -> np.ndarray:
    """``R_e + R_i / sigma``; a zero ``sigma`` drops the intrinsic term."""
    extrinsic = np.asarray(extrinsic, dtype=float)
    if intrinsic is None or sigma <= 0:
        return extrinsic.copy()
    return extrinsic + np.asarray(intrinsic, dtype=float) / sigma


# --- critic ------------------------------------------------------------------

class ValueTable:
    """Per-node baseline, optionally plus a linear term in remaining time.

    The node part moves toward the mean return observed at each visited node
    by ``lr`` per fit. The time coefficient, when enabled, is refit by least
    squares on the residual each epoch.
    """

    def __init__(self, node_count, lr=0.01, with_time=False):
        self.V = np.zeros(node_count)
        self.visits = np.zeros(node_count, dtype=np.int64)
        self.lr = lr
        self.with_time = with_time
        self.time_coef = 0.0

    def predict(self, states, remaining=None) -> np.ndarray:
        v = self.V[states]
        if self.with_time and remaining is not None:
            v = v + self.time_coef * remaining
        return v

    def fit(self, states, returns, remaining=None) -> float:
        states = np.asarray(states)
        if states.size == 0:
            return 0.0
        target = np.asarray(returns, dtype=float)
        if self.with_time and remaining is not None:
            centred = remaining - remaining.mean()
            denom = float(centred @ centred)
            if denom > 0:
                resid = target - self.V[states]
                self.time_coef = float(centred @ (resid - resid.mean()) / denom)
            target = target - self.time_coef * remaining
        n = self.V.size
        counts = np.bincount(states, minlength=n)
        sums = np.bincount(states, weights=target, minlength=n)
        seen = counts > 0
        means = np.zeros(n)
        means[seen] = sums[seen] / counts[seen]
        first = seen & (self.visits == 0)
        self.V[first] = means[first]
        again = seen & ~first
        self.V[again] += self.lr * (means[again] - self.V[again])
        self.visits += counts
        pred = self.predict(states, remaining)
        return float(np.mean((np.asarray(returns) - pred) ** 2))


def advantages(returns, states, value: ValueTable, remaining=None, normalize=True) -> np.ndarray:
    adv = np.asarray(returns, dtype=float) - value.predict(states, remaining)
    if normalize:
        adv = normalize_advantages(adv)
    return adv


def normalize_advantages(adv) -> np.ndarray:
    adv = np.asarray(adv, dtype=float)
    if adv.size == 0:
        return adv
    sd = adv.std()
    centred = adv - adv.mean()
    return centred / sd if sd > 0 else centred


def fit_value(value: ValueTable, states, returns, remaining=None) -> float:
    return value.fit(states, returns, remaining)


# --- actor -------------------------------------------------------------------

def clipped_surrogate(theta, theta_old, slots, adv, clip) -> float:
    """Mean clipped objective over the records."""
    ratio = theta[slots] / theta_old[slots]
    return float(np.mean(np.minimum(ratio * adv, np.clip(ratio, 1 - clip, 1 + clip) * adv)))


def clipped_surrogate_grad(theta, theta_old, slots, adv, clip) -> np.ndarray:
    """Gradient of :func:`clipped_surrogate` with respect to ``theta``.

    A record contributes only while its ratio has not left the clip range in
    the direction its advantage pushes.
    """
    ratio = theta[slots] / theta_old[slots]
    live = ((adv > 0) & (ratio < 1 + clip)) | ((adv < 0) & (ratio > 1 - clip))
    w = np.where(live, adv / theta_old[slots], 0.0)
    return np.bincount(slots, weights=w, minlength=theta.size) / max(len(slots), 1)


def ppo_update(policy: PolicyMatrix, slots, adv, config: TrainerConfig, optimizer: Adam | None = None):
    """Projected gradient ascent on the clipped surrogate.

    Returns ``(new_policy, surrogate_value)``. ``optimizer`` carries Adam
    moments across epochs when supplied.
    """
    net = policy.network
    theta_old = policy.probs
    if np.any(theta_old[slots] < config.prob_floor * (1 - 1e-9)):
        raise TrainingError("behaviour policy has actions below the probability floor")
    if optimizer is None:
        optimizer = Adam(theta_old.size, config.learning_rate)
    theta = theta_old.copy()
    for _ in range(config.iterations):
        grad = clipped_surrogate_grad(theta, theta_old, slots, adv, config.clip)
        if not np.all(np.isfinite(grad)):
            raise TrainingError("non-finite policy gradient")
        # ascent: Adam minimises, so feed it the negated gradient
        theta = project_rows(theta - optimizer.step(-grad), net, config.prob_floor)
    return PolicyMatrix(net, theta), clipped_surrogate(theta, theta_old, slots, adv, config.clip)


# --- imitation -----------------------------------------------------------------

def cross_entropy(target, theta, rows_mask=None) -> float:
    t, p = target.probs, theta
    w = t if rows_mask is None else t * rows_mask
    return float(-(w * np.log(p)).sum())


def _row_softmax(z, network):
    starts = network.indptr[:-1]
    shifted = z - np.repeat(np.maximum.reduceat(z, starts), network.degree)
    e = np.exp(shifted)
    return e / np.repeat(np.add.reduceat(e, starts), network.degree)


def imitation_init(target: PolicyMatrix, lr=0.01, max_steps=30_000, patience=200, tol=1e-9,
                   floor=PROB_FLOOR, rows=None, init=None):
    """Fit a policy to ``target`` by Adam on the cross-entropy.

    The optimiser works on per-row logits (a softmax head on the tabular
    weights); the result is floored back onto the simplex. ``rows``
    optionally restricts the loss to a boolean node mask. Training stops when
    the loss has not improved by more than ``tol`` (relative) for
    ``patience`` steps, or after ``max_steps``. Returns ``(policy, info)``.
    """
    net = target.network
    mask = None if rows is None else np.repeat(np.asarray(rows, dtype=float), net.degree)
    w = target.probs if mask is None else target.probs * mask
    row_w = np.repeat(np.add.reduceat(w, net.indptr[:-1]), net.degree)
    start = random_policy(net) if init is None else init
    z = np.log(np.maximum(start.probs, floor))
    opt = Adam(z.size, lr)
    p = _row_softmax(z, net)
    best = first = cross_entropy(target, p, mask)
    since = steps = 0
    for steps in range(1, max_steps + 1):
        z = z - opt.step(row_w * p - w)
        p = _row_softmax(z, net)
        loss = cross_entropy(target, np.maximum(p, 1e-300), mask)
        if not np.isfinite(loss):
            raise TrainingError("imitation loss diverged")
        if loss < best - tol * max(abs(best), 1.0):
            best, since = loss, 0
        else:
            since += 1
            if since >= patience:
                break
    if best > first:
        raise TrainingError("imitation loss increased")
    theta = project_rows(p, net, floor)
    return PolicyMatrix(net, theta), {"steps": steps, "loss": best}


# --- training loop -------------------------------------------------------------

@dataclass
class Checkpoint:
    policy: PolicyMatrix
    value: ValueTable
    rnd: RndPair | None
    curve: list = field(default_factory=list)


class Trainer:
    """Epoch loop: simulate, score, update actor, predictor and critic."""

    def __init__(self, config: TrainerConfig, network, travel_times, demand, init=None):
        self.config = config
        self.network = network
        self.travel_times = travel_times
        self.demand = demand
        self.policy = random_policy(network) if init is None else init
        self.value = ValueTable(network.node_count, config.learning_rate,
                                with_time=config.baseline == "node-time")
        self.rnd = RndPair(len(network.indices), config.rnd_dim, [config.seed, 1], config.learning_rate) \
            if config.exploration else None
        self.sigma = RunningSigma()
        self.optimizer = Adam(len(network.indices), config.learning_rate)
        self.curve: list[dict] = []
        self.slot_counts = np.zeros(len(network.indices), dtype=np.int64)
        self.epoch = 0

    def epoch_seed(self, epoch):
        return [self.config.seed, 2, epoch]

    def step(self) -> dict:
        cfg = self.config
        if self.epoch == 0:
            self.policy = self.policy.floored(cfg.prob_floor)
        result = run_epoch(
            self.network, self.travel_times, self.demand, PolicyRouter(self.policy),
            cfg.taxi_count, cfg.horizon, self.epoch_seed(self.epoch), cfg.max_samples,
        )
        batch = result.trajectory
        self.slot_counts += np.bincount(batch.slots, minlength=self.slot_counts.size)
        extrinsic = extrinsic_returns(batch, cfg.return_mode)
        intrinsic_mean = 0.0
        if self.rnd is not None and len(batch):
            bonus = self.rnd.bonus(batch.slots)
            intrinsic_mean = float(bonus.mean())
            if cfg.sigma_mode == "epoch":
                self.sigma = RunningSigma()
            self.sigma.update(bonus)
            total = combine_rewards(extrinsic, bonus, self.sigma.sigma)
        else:
            total = extrinsic
        total = total / cfg.horizon
        remaining = (cfg.horizon - batch.times) / cfg.horizon
        surrogate = value_loss = 0.0
        if len(batch):
            adv = advantages(total, batch.states, self.value, remaining)
            self.policy, surrogate = ppo_update(self.policy, batch.slots, adv, cfg, self.optimizer)
            if self.rnd is not None:
                self.rnd.train(batch.slots)
            value_loss = self.value.fit(batch.states, total, remaining)
        row = {
            "epoch": self.epoch,
            "reward_avg": float(result.average_reward),
            "waiting_avg": float(result.average_waiting),
            "intrinsic_mean": intrinsic_mean,
            "loss_surrogate": float(surrogate),
            "loss_value": float(value_loss),
        }
        self.curve.append(row)
        log.debug("epoch %d reward %.4f waiting %.2f", self.epoch, row["reward_avg"], row["waiting_avg"])
        self.epoch += 1
        return row

    def run(self, epochs=None):
        for _ in range(self.config.epochs if epochs is None else epochs):
            self.step()
        return self.policy, self.curve

    def save(self, directory) -> Path:
        """Versioned checkpoint directory with policy, critic and predictor."""
        out = Path(directory) / f"epoch-{self.epoch:05d}"
        out.mkdir(parents=True, exist_ok=True)
        save_policy(self.policy, out / "policy.txt", header=f"epoch {self.epoch}")
        # plain text keeps checkpoints byte-reproducible
        np.savetxt(out / "value.txt", np.column_stack([self.value.V, self.value.visits]), fmt="%.17g",
                   header=f"V visits; time_coef {self.value.time_coef!r}")
        if self.rnd is not None:
            np.savetxt(out / "rnd_target.txt", self.rnd.target, fmt="%.17g")
            np.savetxt(out / "rnd_predictor.txt", self.rnd.predictor, fmt="%.17g")
        with open(out / "config.txt", "w", encoding="utf-8") as fh:
            for k, v in asdict(self.config).items():
                fh.write(f"{k} = {v}\n")
        return out


def train(config: TrainerConfig, network, travel_times, demand, init=None):
    """Run ``config.epochs`` epochs; returns ``(curve, final_policy)``."""
    trainer = Trainer(config, network, travel_times, demand, init)
    policy, curve = trainer.run()
    return curve, policy


def write_curve(path, curve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in curve:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
