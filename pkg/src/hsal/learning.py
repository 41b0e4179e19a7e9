"""Surrogate losses and the two training regimes.

The RL loss is sum over actions of log p * (V - R) with the value estimate
detached inside the weighting (REINFORCE with a state-value baseline),
plus a value-regression MSE term where the log-probability side cannot
leak gradient, plus cross-entropy on the stop class at the final
meta-step. Rewards are immediate per-action quantities; there is no
return accumulation and no discounting. The cross-entropy baseline trains
the same architecture on randomly re-ordered labels with no reward signal
on location actions.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import ndgrad as ng
from .agent import Agent, Trajectory, rollout_episodes
from .config import RunConfig
from .data import batch_iter
from .metrics import EvalReport, mean_attn_saliency, multiset_prf
from .multiset import LabelMultiset
from .ndgrad import Adam, Tensor
from .rewards import clf_reward, loc_reward  # noqa: F401  (module surface)
from .rngs import EVAL_TAG, SAMPLE_TAG, SHUFFLE_TAG, stream_rng


def reinforce_term(logps: Sequence[Tensor], advantages: Sequence[float]) -> Tensor:
    """sum_i log p_i * adv_i with constant advantages (V detached, R a number)."""
    if len(logps) != len(advantages):
        raise ValueError("one advantage per log-probability required")
    cat = ng.concat(list(logps), axis=0)
    return ng.sum_all(ng.mul(cat, Tensor(np.asarray(advantages, dtype=np.float64))))


def value_mse(values: Sequence[Tensor], rewards: Sequence[float]) -> Tensor:
    """sum_i (V_i - R_i)^2; gradient reaches only the value head."""
    cat = ng.concat(list(values), axis=0)
    return ng.sum_all(ng.square(ng.sub(cat, Tensor(np.asarray(rewards, dtype=np.float64)))))


def class_ce(logp_vec: Tensor, target: int) -> Tensor:
    """Cross-entropy -log p[target] from a (1, n) log-probability row."""
    return ng.sum_all(ng.mul(ng.pick(logp_vec, [target]), -1.0))


def surrogate_loss(traj: Trajectory, *, stop_index: int,
                   value_weight: float = 0.5) -> Tensor:
    """Full per-episode RL loss: REINFORCE + value MSE + stop cross-entropy.

    Location actions at every meta-step carry priority-map rewards; the
    classification action carries the multiset reward except at the final
    (stop) step, which is supervised with cross-entropy only.
    """
    logps: list[Tensor] = []
    advs: list[float] = []
    vals: list[Tensor] = []
    rews: list[float] = []
    ce_terms: list[Tensor] = []
    for step in traj.steps:
        if not step.loc_logps or step.class_logp_vec is None:
            raise ValueError("trajectory lacks recorded tensors; "
                             "rerun in train mode with the tape enabled")
        if len(step.loc_rewards) != len(step.loc_logps):
            raise ValueError("trajectory missing location rewards")
        for lp, v, r in zip(step.loc_logps, step.values, step.loc_rewards):
            logps.append(lp)
            advs.append(v.item() - r)
            vals.append(v)
            rews.append(r)
        if step.is_stop_step:
            ce_terms.append(class_ce(step.class_logp_vec, stop_index))
        else:
            if step.clf_reward is None:
                raise ValueError("trajectory missing classification reward")
            v = step.values[-1]
            logps.append(step.class_logp)
            advs.append(v.item() - step.clf_reward)
            vals.append(v)
            rews.append(step.clf_reward)
    loss = ng.add(reinforce_term(logps, advs),
                  ng.mul(value_mse(vals, rews), value_weight))
    for ce in ce_terms:
        loss = ng.add(loss, ce)
    return loss


def ce_episode_loss(traj: Trajectory, targets: Sequence[int], *,
                    stop_index: int) -> Tensor:
    """Cross-entropy on each meta-step's class scores against ordered targets."""
    if len(targets) != len(traj.steps) - 1:
        raise ValueError(f"{len(targets)} targets for {len(traj.steps)} meta-steps")
    terms = []
    for t, step in enumerate(traj.steps):
        if step.class_logp_vec is None:
            raise ValueError("trajectory lacks recorded tensors")
        target = stop_index if step.is_stop_step else int(targets[t])
        terms.append(class_ce(step.class_logp_vec, target))
    return ng.add_n(terms)


# ---------------------------------------------------------------------------
# Training harness


@dataclass
class TaskData:
    """Percepts and labels for one train/test split."""
    train_percepts: list
    train_labels: list            # LabelMultiset per scene (list[int] in list mode)
    test_percepts: list
    test_labels: list
    mode: str = "multiset"

    @property
    def list_mode(self) -> bool:
        return self.mode == "list"


@dataclass
class EpochStats:
    epoch: int
    loss: float
    mean_reward: float
    macro_f1: float
    exact_match: float
    attn_saliency: float


LOG_HEADER = "epoch,batch,loss,mean_reward,f1,exact_match,attn_saliency"


class TrainLog:
    """Append-only CSV training log; epoch summary rows use batch=-1."""

    def __init__(self, path=None):
        self.rows: list[str] = [LOG_HEADER]
        self._fh = open(path, "w") if path is not None else None
        self._emit(LOG_HEADER, new=True)

    def _emit(self, row: str, new: bool = False) -> None:
        if not new:
            self.rows.append(row)
        if self._fh is not None:
            self._fh.write(row + "\n")
            self._fh.flush()

    def batch_row(self, epoch: int, batch: int, loss: float, mean_reward: float) -> None:
        self._emit(f"{epoch},{batch},{loss!r},{mean_reward!r},,,")

    def epoch_row(self, epoch: int, loss: float, mean_reward: float,
                  f1: float, em: float, attn: float) -> None:
        self._emit(f"{epoch},-1,{loss!r},{mean_reward!r},{f1!r},{em!r},{attn!r}")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _as_multisets(labels: Sequence) -> list[LabelMultiset]:
    return [ls if isinstance(ls, LabelMultiset) else LabelMultiset(ls) for ls in labels]


def evaluate_predictions(agent: Agent, task: TaskData,
                         max_steps: int) -> tuple[EvalReport, list[Trajectory]]:
    """Greedy inference over the test split; returns report and trajectories."""
    trajs = rollout_episodes(agent, task.test_percepts, mode="infer",
                             max_steps=max_steps)
    report = multiset_prf([t.predicted for t in trajs], _as_multisets(task.test_labels))
    report.attn_saliency = mean_attn_saliency(trajs)
    return report, trajs


def evaluate_attn_saliency(agent: Agent, task: TaskData, cfg: RunConfig,
                           epoch: int) -> float:
    """Glimpse saliency under the sampling policy on held-out data."""
    rngs = [stream_rng(cfg.seed, EVAL_TAG, epoch, i)
            for i in range(len(task.test_percepts))]
    with ng.no_grad():
        trajs = rollout_episodes(agent, task.test_percepts, task.test_labels,
                                 mode="train", rngs=rngs, list_mode=task.list_mode,
                                 collect_tensors=False)
    return mean_attn_saliency(trajs)


def _shuffled_targets(labels, mode: str, rng: np.random.Generator) -> list[int]:
    if mode == "list":
        return list(labels)
    items = labels.as_sorted_list() if isinstance(labels, LabelMultiset) else list(labels)
    rng.shuffle(items)
    return items


def _train(agent: Agent, task: TaskData, cfg: RunConfig, *, regime: str,
           optimizer: Optional[Adam] = None, log_path=None,
           start_epoch: int = 0, epochs: Optional[int] = None,
           verbose: bool = False,
           epoch_callback=None) -> tuple[list[EpochStats], Adam, TrainLog]:
    if regime not in ("rl", "ce"):
        raise ValueError(f"unknown training regime '{regime}'")
    stop = agent.cfg.stop_index
    opt = optimizer or Adam(agent.params(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    log = TrainLog(log_path)
    n = len(task.train_percepts)
    n_epochs = cfg.epochs if epochs is None else epochs
    stats: list[EpochStats] = []

    for epoch in range(start_epoch + 1, start_epoch + n_epochs + 1):
        order_rng = stream_rng(cfg.seed, SHUFFLE_TAG, epoch)
        epoch_losses: list[float] = []
        epoch_rewards: list[float] = []
        for bi, idxs in enumerate(batch_iter(list(range(n)), cfg.batch_size, order_rng)):
            rngs = [stream_rng(cfg.seed, SAMPLE_TAG, epoch, bi, i) for i in idxs]
            trajs = rollout_episodes(agent,
                                     [task.train_percepts[i] for i in idxs],
                                     [task.train_labels[i] for i in idxs],
                                     mode="train", rngs=rngs,
                                     list_mode=task.list_mode)
            if regime == "rl":
                losses = [surrogate_loss(tr, stop_index=stop,
                                         value_weight=cfg.value_weight)
                          for tr in trajs]
            else:
                losses = []
                for i, tr in zip(idxs, trajs):
                    targets = _shuffled_targets(
                        task.train_labels[i], task.mode,
                        stream_rng(cfg.seed, SHUFFLE_TAG, epoch, i))
                    losses.append(ce_episode_loss(tr, targets, stop_index=stop))
            loss = ng.mul(ng.add_n(losses), 1.0 / len(losses))
            opt.zero_grad()
            ng.backward(loss)
            opt.step()
            mean_rew = float(np.mean([tr.total_reward for tr in trajs]))
            epoch_losses.append(loss.item())
            epoch_rewards.append(mean_rew)
            log.batch_row(epoch, bi, loss.item(), mean_rew)

        report, _ = evaluate_predictions(agent, task, cfg.max_steps)
        attn = evaluate_attn_saliency(agent, task, cfg, epoch)
        ep_loss = float(np.mean(epoch_losses))
        ep_rew = float(np.mean(epoch_rewards))
        log.epoch_row(epoch, ep_loss, ep_rew, report.macro_f1,
                      report.exact_match, attn)
        stats.append(EpochStats(epoch, ep_loss, ep_rew, report.macro_f1,
                                report.exact_match, attn))
        if verbose:
            print(f"[{regime}] epoch {epoch}: loss={ep_loss:.4f} "
                  f"reward={ep_rew:.3f} f1={report.macro_f1:.4f} "
                  f"em={report.exact_match:.4f} attn={attn:.4f}", flush=True)
        if epoch_callback is not None:
            epoch_callback(epoch, stats, opt)
    log.close()
    return stats, opt, log


def train_rl(agent: Agent, task: TaskData, cfg: RunConfig, **kw):
    """Reinforcement training: batched sampled rollouts + surrogate loss."""
    return _train(agent, task, cfg, regime="rl", **kw)


def train_ce_baseline(agent: Agent, task: TaskData, cfg: RunConfig, **kw):
    """Random-order cross-entropy baseline on the identical architecture."""
    return _train(agent, task, cfg, regime="ce", **kw)
