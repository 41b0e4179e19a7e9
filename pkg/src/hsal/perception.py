"""Activation and saliency models.

A small 4-block convnet maps a grayscale canvas to a C*g*g activation
volume (64*8*8 for a 64px canvas). Saliency is the per-location sum of
squared channel activations, min-max normalized. The extractor is trained
once on single-object scenes through a global-average-pool classification
head, then frozen; agents only ever consume its detached outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndgrad as ng
from .ndgrad import Adam, Tensor
from .nn import Linear


def normalize_map(s: np.ndarray) -> np.ndarray:
    """Rescale to min 0 / max 1; a constant map becomes all zeros."""
    s = np.asarray(s, dtype=np.float64)
    lo, hi = s.min(), s.max()
    if hi <= lo:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)


def saliency_reduce(volume: np.ndarray) -> np.ndarray:
    """Channel-wise sum of squares, normalized to [0, 1]."""
    v = np.asarray(volume, dtype=np.float64)
    if v.ndim != 3:
        raise ng.DimensionError(f"saliency_reduce: expects C*h*w, got {v.shape}")
    return normalize_map((v * v).sum(axis=0))


class ConvExtractor:
    """Four conv3x3+relu blocks, stride 2 on the first three.

    64x64 input -> 64x8x8 activation volume. Channel progression
    1 -> 16 -> 32 -> 64 -> 64.
    """

    CHANNELS = (1, 16, 32, 64, 64)
    STRIDES = (2, 2, 2, 1)

    def __init__(self, rng: np.random.Generator, in_channels: int = 1):
        chans = (in_channels,) + self.CHANNELS[1:]
        self.weights = []
        self.biases = []
        for i, (cin, cout) in enumerate(zip(chans[:-1], chans[1:])):
            fan_in = cin * 9
            limit = np.sqrt(6.0 / (fan_in + cout))
            w = Tensor(rng.uniform(-limit, limit, size=(cout, cin, 3, 3)), requires_grad=True)
            b = Tensor(np.zeros(cout), requires_grad=True)
            self.weights.append(w)
            self.biases.append(b)

    @property
    def out_channels(self) -> int:
        return self.CHANNELS[-1]

    def forward(self, image: Tensor) -> Tensor:
        """(1,H,W) or (B,1,H,W) image in [0,1] -> activation volume."""
        x = ng.as_tensor(image)
        expect = self.weights[0].data.shape[1]
        if x.data.shape[-3] != expect:
            raise ng.DimensionError(
                f"extractor: expected {expect}-channel input, got shape {x.data.shape}")
        for w, b, s in zip(self.weights, self.biases, self.STRIDES):
            x = ng.relu(ng.conv2d(x, w, stride=s, padding=1, bias=b))
        return x

    def params(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            out[f"extractor.conv{i}.w"] = w
            out[f"extractor.conv{i}.b"] = b
        return out

    def freeze(self) -> None:
        for p in self.params().values():
            p.requires_grad = False

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.params().values())


def activation_forward(extractor: ConvExtractor, image: np.ndarray) -> np.ndarray:
    """Detached activation volume for one (1,H,W) or (H,W) image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    with ng.no_grad():
        return extractor.forward(Tensor(img)).data


@dataclass
class Percept:
    """Frozen per-image inputs to an episode."""
    volume: np.ndarray    # (C, g, g)
    saliency: np.ndarray  # (g, g) in [0, 1]
    columns: np.ndarray   # (g*g, C) row-major view of the volume

    @property
    def grid(self) -> int:
        return self.saliency.shape[0]


def make_percept(volume: np.ndarray) -> Percept:
    c = volume.shape[0]
    cols = np.ascontiguousarray(volume.reshape(c, -1).T)
    return Percept(volume=volume, saliency=saliency_reduce(volume), columns=cols)


def compute_percepts(extractor: ConvExtractor, images: np.ndarray,
                     batch: int = 64) -> list[Percept]:
    """Precompute volumes and saliency maps for a stack of (H,W) images."""
    images = np.asarray(images, dtype=np.float64)
    out = []
    with ng.no_grad():
        for lo in range(0, len(images), batch):
            chunk = images[lo:lo + batch][:, None, :, :]
            vols = extractor.forward(Tensor(chunk)).data
            out.extend(make_percept(v) for v in vols)
    return out


def pretrain_extractor(extractor: ConvExtractor, images: np.ndarray,
                       labels: np.ndarray, *, epochs: int, n_classes: int,
                       rng: np.random.Generator, lr: float = 1e-3,
                       batch_size: int = 32,
                       val_images: np.ndarray | None = None,
                       val_labels: np.ndarray | None = None) -> float:
    """Train extractor + GAP + linear head with cross-entropy; head discarded.

    Returns classification accuracy on the validation set (training set when
    none is given). With epochs=0 the weights are untouched.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("pretrain_extractor: empty dataset")
    head = Linear(extractor.out_channels, n_classes, rng, "pretrain_head")
    params = {**extractor.params(), **head.params()}
    opt = Adam(params, lr=lr)

    n = len(images)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            x = Tensor(images[idx][:, None, :, :])
            feats = ng.spatial_mean(extractor.forward(x))
            logp = ng.log_softmax(head(feats))
            loss = ng.mul(ng.sum_all(ng.pick(logp, labels[idx])), -1.0 / len(idx))
            opt.zero_grad()
            ng.backward(loss)
            opt.step()

    vx = images if val_images is None else np.asarray(val_images, dtype=np.float64)
    vy = labels if val_labels is None else np.asarray(val_labels, dtype=np.int64)
    correct = 0
    with ng.no_grad():
        for lo in range(0, len(vx), 256):
            chunk = Tensor(vx[lo:lo + 256][:, None, :, :])
            feats = ng.spatial_mean(extractor.forward(chunk))
            scores = head(feats).data
            correct += int((scores.argmax(axis=1) == vy[lo:lo + 256]).sum())
    return correct / len(vx)
