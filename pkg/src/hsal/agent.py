"""Two-level recurrent attention agent.

Per meta-step: the meta-controller reads the flattened saliency map plus
the previous prediction and emits a Gaussian-mixture attention mask. The
interface turns the mask into a priority map (mask * saliency, min-max
normalized) and an initial glimpse vector (mask-weighted sum of activation
columns). The controller then runs k location steps and one classification
step, after which glimpsed cells are zeroed and the mask is subtracted
from the saliency map (inhibition of return).

Location-head and value-head gradients are cut at the GRU state; the
classification head stays attached, which is what lets the recurrent core
and the meta-controller learn from classification log-probabilities.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import ndgrad as ng
from .attention import build_mask_flat, transform_raw_params
from .multiset import LabelMultiset
from .ndgrad import Tensor
from .nn import GRUCell, Linear, Mlp
from .rewards import clf_reward
from .perception import Percept, make_percept


def one_hot(indices: np.ndarray, n: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.shape[0], n))
    valid = indices >= 0
    out[np.arange(len(indices))[valid], indices[valid]] = 1.0
    return out


@dataclass
class AgentConfig:
    n_classes: int = 10
    grid: int = 8
    channels: int = 64
    components: int = 5
    glimpses: int = 2
    meta_hidden: int = 128
    ctrl_hidden: int = 512
    loc_hidden: int = 64

    @property
    def n_cells(self) -> int:
        return self.grid * self.grid

    @property
    def stop_index(self) -> int:
        return self.n_classes

    @property
    def start_index(self) -> int:
        return self.n_classes + 1

    @property
    def n_feedback(self) -> int:
        # classes + stop + start token
        return self.n_classes + 2

    @property
    def n_class_out(self) -> int:
        return self.n_classes + 1


class Agent:
    """Meta-controller + controller parameter container."""

    def __init__(self, cfg: AgentConfig, rng: np.random.Generator):
        self.cfg = cfg
        c = cfg
        self.meta_encode = Linear(c.n_cells + c.n_feedback, c.meta_hidden, rng, "meta.encode")
        self.meta_gru = GRUCell(c.meta_hidden, c.meta_hidden, rng, "meta.gru")
        self.attn_head = Linear(c.meta_hidden, 4 * c.components, rng, "meta.attn")
        ctrl_in = c.n_cells + c.n_feedback + c.n_cells + c.channels
        self.ctrl_encode = Linear(ctrl_in, c.ctrl_hidden, rng, "ctrl.encode")
        self.ctrl_gru = GRUCell(c.ctrl_hidden, c.ctrl_hidden, rng, "ctrl.gru")
        self.loc_head = Mlp(c.ctrl_hidden, c.loc_hidden, c.n_cells, rng, "ctrl.loc")
        self.class_head = Linear(c.ctrl_hidden, c.n_class_out, rng, "ctrl.cls")
        self.value_head = Linear(c.ctrl_hidden, 1, rng, "ctrl.value")

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for layer in (self.meta_encode, self.meta_gru, self.attn_head,
                      self.ctrl_encode, self.ctrl_gru, self.loc_head,
                      self.class_head, self.value_head):
            out.update(layer.params())
        return out

    # -- batched building blocks -------------------------------------------

    def meta_step_batch(self, sal_flat: np.ndarray, prev_idx: np.ndarray,
                        h: Tensor) -> tuple[Tensor, Tensor]:
        """(B, n_cells) saliency + previous-label indices -> flat mask, new state."""
        c = self.cfg
        x = Tensor(np.concatenate([sal_flat, one_hot(prev_idx, c.n_feedback)], axis=1))
        h_new = self.meta_gru(self.meta_encode(x), h)
        raw = self.attn_head(h_new)
        params = transform_raw_params(raw, c.grid, c.grid)
        mask = build_mask_flat(params, c.grid, c.grid)
        return mask, h_new

    def interface_batch(self, mask_flat: Tensor, sal_flat: np.ndarray,
                        cols: np.ndarray) -> tuple[Tensor, Tensor]:
        """Priority map (normalized mask*saliency) and initial glimpse vector."""
        priority = ng.minmax_normalize(ng.mul(mask_flat, Tensor(sal_flat)))
        g0 = ng.weighted_cols(mask_flat, Tensor(cols))
        return priority, g0

    def controller_core(self, priority: Tensor, prev_idx: np.ndarray,
                        a_prev: np.ndarray, g_prev: Tensor, h: Tensor) -> Tensor:
        c = self.cfg
        feedback = Tensor(np.concatenate([one_hot(prev_idx, c.n_feedback), a_prev], axis=1))
        x = ng.concat([priority, feedback, g_prev], axis=1)
        return self.ctrl_gru(self.ctrl_encode(x), h)

    def location_scores(self, h: Tensor) -> Tensor:
        return self.loc_head(h.detach())

    def class_scores(self, h: Tensor) -> Tensor:
        return self.class_head(h)

    def value_estimate(self, h: Tensor) -> Tensor:
        v = self.value_head(h.detach())
        return ng.reshape(v, (v.data.shape[0],))


# ---------------------------------------------------------------------------
# Trajectories


@dataclass
class MetaStepRecord:
    saliency: np.ndarray                 # (g, g) map fed to this step, pre-update
    mask: np.ndarray                     # (g, g)
    priority: np.ndarray                 # (g, g)
    glimpses: list                       # k cells as (x, y)
    class_index: int
    is_stop_step: bool = False
    loc_rewards: list = field(default_factory=list)
    clf_reward: Optional[float] = None
    loc_logps: list = field(default_factory=list)      # k tensors, shape (1,)
    class_logp: Optional[Tensor] = None                # (1,)
    class_logp_vec: Optional[Tensor] = None            # (1, n_classes+1)
    values: list = field(default_factory=list)         # k+1 tensors, shape (1,)


@dataclass
class Trajectory:
    steps: list[MetaStepRecord] = field(default_factory=list)
    predicted: LabelMultiset = field(default_factory=LabelMultiset)
    labels: Optional[LabelMultiset] = None

    @property
    def total_reward(self) -> float:
        total = 0.0
        for s in self.steps:
            total += sum(s.loc_rewards)
            if s.clf_reward is not None:
                total += s.clf_reward
        return total


# ---------------------------------------------------------------------------
# Saliency update


def update_saliency(s: np.ndarray, m: np.ndarray,
                    glimpses: Sequence[tuple[int, int]]) -> np.ndarray:
    """Inhibition of return: zero glimpsed cells, subtract the mask elsewhere."""
    s = np.asarray(s, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if s.shape != m.shape:
        raise ng.DimensionError(f"update_saliency: saliency {s.shape} vs mask {m.shape}")
    out = np.maximum(s - m, 0.0)
    h, w = s.shape
    for (x, y) in glimpses:
        if not (0 <= x < w and 0 <= y < h):
            raise IndexError(f"update_saliency: glimpse ({x}, {y}) outside {h}x{w} grid")
        out[y, x] = 0.0
    return out


# ---------------------------------------------------------------------------
# Batched rollouts


def _sample_rows(logp: np.ndarray, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    probs = np.exp(logp)
    cum = probs.cumsum(axis=1)
    out = np.empty(len(probs), dtype=np.int64)
    for b in range(len(probs)):
        u = rngs[b].random() * cum[b, -1]
        out[b] = min(int(np.searchsorted(cum[b], u, side="right")), probs.shape[1] - 1)
    return out


def _rollout_fixed(agent: Agent, percepts: Sequence[Percept],
                   labelsets: Sequence, rngs: Sequence[np.random.Generator],
                   *, list_mode: bool, collect_tensors: bool) -> list[Trajectory]:
    """Sampled rollouts of exactly m+1 meta-steps; group shares one m."""
    c = agent.cfg
    bsz = len(percepts)
    m = len(labelsets[0])
    steps_total = m + 1
    k = c.glimpses

    sal = np.stack([p.saliency.ravel() for p in percepts]).astype(np.float64)
    cols = np.stack([p.columns for p in percepts])
    meta_h = agent.meta_gru.initial_state(bsz)
    ctrl_h = agent.ctrl_gru.initial_state(bsz)
    prev_idx = np.full(bsz, c.start_index, dtype=np.int64)
    if list_mode:
        ordered = [list(ls) for ls in labelsets]
    else:
        avail = [LabelMultiset(ls) for ls in labelsets]
    trajs = [Trajectory(labels=LabelMultiset(ls)) for ls in labelsets]

    rows = np.arange(bsz)
    for t in range(1, steps_total + 1):
        sal_before = sal.copy()
        mask, meta_h = agent.meta_step_batch(sal, prev_idx, meta_h)
        priority, g_prev = agent.interface_batch(mask, sal, cols)
        p_data = priority.data
        a_prev = np.zeros((bsz, c.n_cells))
        step_glimpses: list[list] = [[] for _ in range(bsz)]
        loc_logps, loc_rewards, values = [], [], []
        for _ in range(k):
            ctrl_h = agent.controller_core(priority, prev_idx, a_prev, g_prev, ctrl_h)
            logp_vec = ng.log_softmax(agent.location_scores(ctrl_h))
            actions = _sample_rows(logp_vec.data, rngs)
            loc_logps.append(ng.pick(logp_vec, actions))
            values.append(agent.value_estimate(ctrl_h))
            loc_rewards.append(p_data[rows, actions])
            for b in range(bsz):
                a = int(actions[b])
                step_glimpses[b].append((a % c.grid, a // c.grid))
            g_prev = ng.gather_cols(Tensor(cols), actions)
            a_prev = one_hot(actions, c.n_cells)

        ctrl_h = agent.controller_core(priority, prev_idx, a_prev, g_prev, ctrl_h)
        cls_logp_vec = ng.log_softmax(agent.class_scores(ctrl_h))
        sampled = _sample_rows(cls_logp_vec.data, rngs)
        cls_logp = ng.pick(cls_logp_vec, sampled)
        values.append(agent.value_estimate(ctrl_h))

        is_stop_step = t == steps_total
        for b in range(bsz):
            pred = int(sampled[b])
            rec = MetaStepRecord(
                saliency=sal_before[b].reshape(c.grid, c.grid),
                mask=mask.data[b].reshape(c.grid, c.grid).copy(),
                priority=p_data[b].reshape(c.grid, c.grid).copy(),
                glimpses=step_glimpses[b],
                class_index=pred,
                is_stop_step=is_stop_step,
                loc_rewards=[float(lr[b]) for lr in loc_rewards],
            )
            if not is_stop_step:
                if list_mode:
                    step_avail = LabelMultiset([ordered[b][t - 1]])
                    r, _ = clf_reward(pred, step_avail)
                else:
                    r, avail[b] = clf_reward(pred, avail[b])
                rec.clf_reward = float(r)
                if pred < c.n_classes:
                    trajs[b].predicted.add(pred)
            if collect_tensors:
                rec.loc_logps = [ng.narrow(lp, 0, b, 1) for lp in loc_logps]
                rec.values = [ng.narrow(v, 0, b, 1) for v in values]
                rec.class_logp = ng.narrow(cls_logp, 0, b, 1)
                rec.class_logp_vec = ng.narrow(cls_logp_vec, 0, b, 1)
            trajs[b].steps.append(rec)

        mask_data = mask.data
        new_sal = np.maximum(sal - mask_data, 0.0)
        for b in range(bsz):
            for (x, y) in step_glimpses[b]:
                new_sal[b, y * c.grid + x] = 0.0
        sal = new_sal
        prev_idx = sampled

    return trajs


def _rollout_greedy(agent: Agent, percepts: Sequence[Percept],
                    max_steps: int) -> list[Trajectory]:
    """Deterministic inference until the stop class or the step cap."""
    c = agent.cfg
    bsz = len(percepts)
    with ng.no_grad():
        sal = np.stack([p.saliency.ravel() for p in percepts]).astype(np.float64)
        cols = np.stack([p.columns for p in percepts])
        meta_h = agent.meta_gru.initial_state(bsz).data
        ctrl_h = agent.ctrl_gru.initial_state(bsz).data
        prev_idx = np.full(bsz, c.start_index, dtype=np.int64)
        trajs = [Trajectory() for _ in range(bsz)]
        active = np.arange(bsz)

        for t in range(1, max_steps + 1):
            nb = len(active)
            rows = np.arange(nb)
            sal_before = sal.copy()
            mask, meta_h_t = agent.meta_step_batch(sal, prev_idx, Tensor(meta_h))
            meta_h = meta_h_t.data
            priority, g_prev = agent.interface_batch(mask, sal, cols)
            p_data = priority.data
            a_prev = np.zeros((nb, c.n_cells))
            hidden = Tensor(ctrl_h)
            step_glimpses: list[list] = [[] for _ in range(nb)]
            for _ in range(c.glimpses):
                hidden = agent.controller_core(priority, prev_idx, a_prev, g_prev, hidden)
                scores = agent.location_scores(hidden).data
                actions = scores.argmax(axis=1)
                for b in range(nb):
                    a = int(actions[b])
                    step_glimpses[b].append((a % c.grid, a // c.grid))
                g_prev = ng.gather_cols(Tensor(cols), actions)
                a_prev = one_hot(actions, c.n_cells)
            hidden = agent.controller_core(priority, prev_idx, a_prev, g_prev, hidden)
            ctrl_h = hidden.data
            preds = agent.class_scores(hidden).data.argmax(axis=1)

            keep = []
            for b in range(nb):
                ep = int(active[b])
                pred = int(preds[b])
                stopped = pred == c.stop_index or t == max_steps
                trajs[ep].steps.append(MetaStepRecord(
                    saliency=sal_before[b].reshape(c.grid, c.grid),
                    mask=mask.data[b].reshape(c.grid, c.grid).copy(),
                    priority=p_data[b].reshape(c.grid, c.grid).copy(),
                    glimpses=step_glimpses[b],
                    class_index=pred,
                    is_stop_step=pred == c.stop_index,
                ))
                if pred < c.n_classes:
                    trajs[ep].predicted.add(pred)
                if not stopped:
                    keep.append(b)
            if not keep:
                break
            keep = np.asarray(keep, dtype=np.int64)
            new_sal = np.maximum(sal - mask.data, 0.0)
            for b in keep:
                for (x, y) in step_glimpses[b]:
                    new_sal[b, y * c.grid + x] = 0.0
            sal = new_sal[keep]
            cols = cols[keep]
            meta_h = meta_h[keep]
            ctrl_h = ctrl_h[keep]
            prev_idx = preds[keep]
            active = active[keep]
    return trajs


def _group_cap() -> int:
    cap = os.environ.get("HSAL_THREADS")
    if cap:
        return max(1, int(cap))
    return 1 << 30


def rollout_episodes(agent: Agent, percepts: Sequence[Percept],
                     labelsets: Optional[Sequence] = None, *,
                     mode: str, rngs: Optional[Sequence] = None,
                     max_steps: int = 6, list_mode: bool = False,
                     collect_tensors: Optional[bool] = None) -> list[Trajectory]:
    """Roll out a batch of episodes.

    "train": sampled actions, exactly len(labels)+1 meta-steps per episode
    (episodes are grouped by multiset size internally); requires labelsets
    and per-episode rngs. "infer": greedy actions until stop or max_steps.
    """
    if mode == "train":
        if labelsets is None or rngs is None:
            raise ValueError("train rollouts need labelsets and rngs")
        for ls in labelsets:
            if len(ls) == 0:
                raise ValueError("train rollout with empty label multiset")
        if collect_tensors is None:
            collect_tensors = ng.grad_enabled()
        cap = _group_cap()
        by_len: dict[int, list[int]] = {}
        for i, ls in enumerate(labelsets):
            by_len.setdefault(len(ls), []).append(i)
        out: list[Optional[Trajectory]] = [None] * len(percepts)
        for _, idxs in sorted(by_len.items()):
            for lo in range(0, len(idxs), cap):
                chunk = idxs[lo:lo + cap]
                trajs = _rollout_fixed(
                    agent,
                    [percepts[i] for i in chunk],
                    [labelsets[i] for i in chunk],
                    [rngs[i] for i in chunk],
                    list_mode=list_mode,
                    collect_tensors=collect_tensors)
                for i, tr in zip(chunk, trajs):
                    out[i] = tr
        return out  # type: ignore[return-value]
    if mode == "infer":
        if max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {max_steps}")
        return _rollout_greedy(agent, percepts, max_steps)
    raise ValueError(f"unknown rollout mode '{mode}'")


def episode_rollout(agent: Agent, percept, labels=None, *, mode: str,
                    max_steps: int = 6, rng: Optional[np.random.Generator] = None,
                    extractor=None, list_mode: bool = False) -> Trajectory:
    """Single-episode rollout; accepts a Percept or a raw image + extractor."""
    if not isinstance(percept, Percept):
        if extractor is None:
            raise ValueError("raw-image rollout needs an extractor")
        from .perception import activation_forward
        percept = make_percept(activation_forward(extractor, np.asarray(percept)))
    if mode == "train" and rng is None:
        raise ValueError("train rollout needs an rng")
    return rollout_episodes(agent, [percept],
                            [labels] if labels is not None else None,
                            mode=mode, rngs=[rng] if rng is not None else None,
                            max_steps=max_steps, list_mode=list_mode)[0]


# ---------------------------------------------------------------------------
# Single-episode surfaces (used by tests and the visualizer)


def meta_step(agent: Agent, saliency: np.ndarray, prev_label: int,
              state: Optional[Tensor]) -> tuple[Tensor, Tensor]:
    """One meta-controller step on a (g, g) saliency map."""
    c = agent.cfg
    s = np.asarray(saliency, dtype=np.float64)
    if s.shape != (c.grid, c.grid):
        raise ng.DimensionError(f"meta_step: saliency {s.shape}, expected "
                                f"({c.grid}, {c.grid})")
    h = state if state is not None else agent.meta_gru.initial_state(1)
    mask, h_new = agent.meta_step_batch(s.reshape(1, -1),
                                        np.array([prev_label]), h)
    return ng.reshape(mask, (c.grid, c.grid)), h_new


def interface(mask: Tensor, saliency: np.ndarray,
              volume: np.ndarray) -> tuple[Tensor, Tensor]:
    """Priority map and g0 for one episode; mask stays on the tape."""
    m = mask if isinstance(mask, Tensor) else Tensor(np.asarray(mask, dtype=np.float64))
    s = np.asarray(saliency, dtype=np.float64)
    v = np.asarray(volume, dtype=np.float64)
    if m.data.shape != s.shape:
        raise ng.DimensionError(f"interface: mask {m.data.shape} vs saliency {s.shape}")
    if v.shape[1:] != s.shape:
        raise ng.DimensionError(f"interface: volume {v.shape} vs saliency {s.shape}")
    g = s.shape[0]
    cols = np.ascontiguousarray(v.reshape(v.shape[0], -1).T)[None]
    flat = ng.reshape(m, (1, -1))
    priority = ng.minmax_normalize(ng.mul(flat, Tensor(s.reshape(1, -1))))
    g0 = ng.weighted_cols(flat, Tensor(cols))
    return ng.reshape(priority, (g, g)), ng.reshape(g0, (v.shape[0],))


def controller_rollout(agent: Agent, priority, g0, prev_label: int,
                       volume: np.ndarray, state: Optional[Tensor], mode: str,
                       rng: Optional[np.random.Generator] = None):
    """k location choices plus one classification for a single meta-step.

    Returns (locations, class_scores, value_estimates, log_probs, state).
    """
    if mode not in ("sample", "greedy"):
        raise ValueError(f"unknown controller mode '{mode}'")
    if mode == "sample" and rng is None:
        raise ValueError("sample mode needs an rng")
    c = agent.cfg
    p = priority if isinstance(priority, Tensor) else Tensor(np.asarray(priority))
    p = ng.reshape(p, (1, c.n_cells))
    g_prev = g0 if isinstance(g0, Tensor) else Tensor(np.asarray(g0))
    g_prev = ng.reshape(g_prev, (1, c.channels))
    v = np.asarray(volume, dtype=np.float64)
    cols = np.ascontiguousarray(v.reshape(v.shape[0], -1).T)[None]
    h = state if state is not None else agent.ctrl_gru.initial_state(1)
    prev_idx = np.array([prev_label])
    a_prev = np.zeros((1, c.n_cells))

    locations, values, log_probs = [], [], []
    for _ in range(c.glimpses):
        h = agent.controller_core(p, prev_idx, a_prev, g_prev, h)
        logp_vec = ng.log_softmax(agent.location_scores(h))
        if mode == "sample":
            action = int(_sample_rows(logp_vec.data, [rng])[0])
        else:
            action = int(logp_vec.data.argmax(axis=1)[0])
        locations.append((action % c.grid, action // c.grid))
        log_probs.append(ng.pick(logp_vec, [action]))
        values.append(agent.value_estimate(h))
        g_prev = ng.gather_cols(Tensor(cols), [action])
        a_prev = one_hot(np.array([action]), c.n_cells)
    h = agent.controller_core(p, prev_idx, a_prev, g_prev, h)
    class_scores = agent.class_scores(h)
    cls_logp_vec = ng.log_softmax(class_scores)
    if mode == "sample":
        chosen = int(_sample_rows(cls_logp_vec.data, [rng])[0])
    else:
        chosen = int(cls_logp_vec.data.argmax(axis=1)[0])
    log_probs.append(ng.pick(cls_logp_vec, [chosen]))
    values.append(agent.value_estimate(h))
    return locations, ng.reshape(class_scores, (c.n_class_out,)), values, log_probs, h
