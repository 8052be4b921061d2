"""The pair-contrast network.

A weight-shared pre-activation residual encoder maps each (recognizing,
candidate) image pair, stacked as a 2-channel input, to a difference
embedding. All L embeddings of one episode are concatenated and fed
through a single dense + sigmoid head that scores every candidate
jointly; the minimum activation marks the predicted positive.

Encoder layout for depth knob n (trainable layer count = 6n + 2):
stem 3x3 conv (2 -> 16), then three stages of n pre-activation units at
16 / 32 / embed_dim channels. The first unit of stages two and three
halves the spatial resolution (stride-2 first conv, 1x1 stride-2
projection shortcut). A final BN+ReLU and global average pooling
produce the embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .tensor import (
    RunningStats,
    Tensor,
    batch_norm,
    conv2d,
    dense,
    global_avg_pool,
)

ACTIVATION_CLAMP = 1e-7  # keeps the log-loss finite at saturated activations


@dataclass(frozen=True)
class ModelSpec:
    depth_n: int = 1
    image_size: int = 28
    n_candidates: int = 20
    in_channels: int = 2
    embed_dim: int = 64

    def __post_init__(self):
        if self.depth_n < 1:
            raise ConfigError(f"depth_n must be >= 1, got {self.depth_n}")
        for name in ("image_size", "n_candidates", "in_channels", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def layer_count(self) -> int:
        return self.depth_n * 2 * 3 + 2

    @property
    def stage_widths(self) -> tuple:
        return (16, 32, self.embed_dim)

    def to_dict(self) -> dict:
        return {
            "depth_n": self.depth_n,
            "image_size": self.image_size,
            "n_candidates": self.n_candidates,
            "in_channels": self.in_channels,
            "embed_dim": self.embed_dim,
        }


def param_shapes(spec: ModelSpec) -> dict:
    """Ordered name -> shape manifest for every trainable tensor."""
    shapes: dict = {"stem.w": (16, spec.in_channels, 3, 3)}
    c_in = 16
    for s, width in enumerate(spec.stage_widths, start=1):
        for u in range(spec.depth_n):
            p = f"s{s}.u{u}"
            shapes[f"{p}.bn1.gamma"] = (c_in,)
            shapes[f"{p}.bn1.beta"] = (c_in,)
            shapes[f"{p}.conv1.w"] = (width, c_in, 3, 3)
            shapes[f"{p}.bn2.gamma"] = (width,)
            shapes[f"{p}.bn2.beta"] = (width,)
            shapes[f"{p}.conv2.w"] = (width, width, 3, 3)
            if u == 0 and s > 1:
                shapes[f"{p}.proj.w"] = (width, c_in, 1, 1)
            c_in = width
    shapes["final_bn.gamma"] = (spec.embed_dim,)
    shapes["final_bn.beta"] = (spec.embed_dim,)
    shapes["head.w"] = (spec.n_candidates * spec.embed_dim, spec.n_candidates)
    shapes["head.b"] = (spec.n_candidates,)
    return shapes


def bn_layer_channels(spec: ModelSpec) -> dict:
    """Name -> channel count for every normalization layer's running stats."""
    layers: dict = {}
    c_in = 16
    for s, width in enumerate(spec.stage_widths, start=1):
        for u in range(spec.depth_n):
            layers[f"s{s}.u{u}.bn1"] = c_in
            layers[f"s{s}.u{u}.bn2"] = width
            c_in = width
    layers["final_bn"] = spec.embed_dim
    return layers


@dataclass
class ModelParams:
    tensors: dict  # name -> Tensor
    bn_stats: dict  # name -> RunningStats

    def validate_against(self, spec: ModelSpec) -> None:
        expect = param_shapes(spec)
        got = {k: v.shape for k, v in self.tensors.items()}
        if got != expect:
            bad = {k for k in set(expect) | set(got) if expect.get(k) != got.get(k)}
            raise ShapeError(f"parameter shapes do not match spec: {sorted(bad)}")
        expect_bn = bn_layer_channels(spec)
        for name, ch in expect_bn.items():
            st = self.bn_stats.get(name)
            if st is None or st.mean.shape != (ch,):
                raise ShapeError(f"running stats for {name} missing or wrong shape")


class ContrastNet:
    """Bundled spec + parameters with the forward paths."""

    def __init__(self, spec: ModelSpec, params: ModelParams):
        params.validate_against(spec)
        self.spec = spec
        self.params = params

    # -- forward -----------------------------------------------------------

    def _bn(self, x, name, train):
        p = self.params.tensors
        return batch_norm(
            x, p[f"{name}.gamma"], p[f"{name}.beta"], self.params.bn_stats[name], train
        )

    def _unit(self, h, name, stride, train):
        p = self.params.tensors
        a = self._bn(h, f"{name}.bn1", train).relu()
        if f"{name}.proj.w" in p:
            shortcut = conv2d(a, p[f"{name}.proj.w"], stride=stride, pad=0)
        else:
            shortcut = h
        b = conv2d(a, p[f"{name}.conv1.w"], stride=stride, pad=1)
        b = self._bn(b, f"{name}.bn2", train).relu()
        b = conv2d(b, p[f"{name}.conv2.w"], stride=1, pad=1)
        return b + shortcut

    def encode_pairs(self, pairs, train: bool = False) -> Tensor:
        """[B, 2, H, W] stacked pairs -> [B, embed_dim] difference embeddings.

        Channel 0 is the recognizing image, channel 1 the candidate; the
        roles are asymmetric and the order is part of the contract.
        """
        x = pairs if isinstance(pairs, Tensor) else Tensor(pairs)
        if x.data.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(
                f"expected [B,{self.spec.in_channels},H,W] pair batch, got {x.shape}"
            )
        h = conv2d(x, self.params.tensors["stem.w"], stride=1, pad=1)
        for s in (1, 2, 3):
            for u in range(self.spec.depth_n):
                stride = 2 if (s > 1 and u == 0) else 1
                h = self._unit(h, f"s{s}.u{u}", stride, train)
        h = self._bn(h, "final_bn", train).relu()
        return global_avg_pool(h)

    def score_embeddings(self, embeddings: Tensor, n_contexts: int) -> Tensor:
        """Group [N*L, embed] into episodes and score candidates jointly."""
        L, D = self.spec.n_candidates, self.spec.embed_dim
        if embeddings.shape != (n_contexts * L, D):
            raise ShapeError(
                f"expected ({n_contexts * L}, {D}) embeddings, got {embeddings.shape}"
            )
        blocks = embeddings.reshape(n_contexts, L * D)
        p = self.params.tensors
        return dense(blocks, p["head.w"], p["head.b"]).sigmoid()

    def forward_pairs(self, pairs, n_contexts: int, train: bool = False) -> Tensor:
        """[N*L, 2, H, W] (episode-major pair order) -> [N, L] activations."""
        return self.score_embeddings(self.encode_pairs(pairs, train), n_contexts)

    # -- episode helpers -----------------------------------------------------

    def assemble_pairs(self, dataset, contexts, shot: int = 0) -> np.ndarray:
        """Stack pair images for a batch of episodes, one recognizing shot each."""
        size = self.spec.image_size
        n = len(contexts)
        L = self.spec.n_candidates
        out = np.empty((n * L, 2, size, size), dtype=np.float32)
        from .data import resize

        for i, ctx in enumerate(contexts):
            if ctx.n_candidates != L:
                raise ShapeError(
                    f"context has {ctx.n_candidates} candidates, model expects {L}"
                )
            rec = resize(dataset.image(ctx.recognizing[shot]), size)
            for j, ref in enumerate(ctx.candidates):
                out[i * L + j, 0] = rec
                out[i * L + j, 1] = resize(dataset.image(ref), size)
        return out

    def forward_contexts(self, dataset, contexts, train: bool = False) -> Tensor:
        """One-shot episodes -> [N, L] activations."""
        pairs = self.assemble_pairs(dataset, contexts)
        return self.forward_pairs(pairs, len(contexts), train)

    def multishot_activations(self, dataset, ctx) -> np.ndarray:
        """Few-shot scoring: run each recognizing shot as its own one-shot
        episode over the shared candidates and sum the activation vectors."""
        n_shot = len(ctx.recognizing)
        size = self.spec.image_size
        L = self.spec.n_candidates
        from .data import resize

        cand = [resize(dataset.image(r), size) for r in ctx.candidates]
        pairs = np.empty((n_shot * L, 2, size, size), dtype=np.float32)
        for s, rec_ref in enumerate(ctx.recognizing):
            rec = resize(dataset.image(rec_ref), size)
            for j in range(L):
                pairs[s * L + j, 0] = rec
                pairs[s * L + j, 1] = cand[j]
        acts = self.forward_pairs(pairs, n_shot, train=False)
        return acts.data.sum(axis=0)


def contrast_loss(activations: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary log loss over episodes and candidates.

    labels[i, j] is 0 for the positive candidate (driven toward activation
    0) and 1 for negatives (driven toward 1); exactly one 0 per episode.
    Activations are clamped away from {0, 1} so the logs stay finite.
    """
    z = np.asarray(labels)
    if z.shape != activations.shape:
        raise ShapeError(f"labels shape {z.shape} vs activations {activations.shape}")
    if not np.all((z == 0) | (z == 1)):
        raise ContractError("labels must be 0/1")
    if not np.all((z == 0).sum(axis=1) == 1):
        raise ContractError("each episode needs exactly one positive label")
    z = z.astype(activations.dtype)
    a = activations.clip(ACTIVATION_CLAMP, 1.0 - ACTIVATION_CLAMP)
    per_term = a.log() * z + (1.0 - a).log() * (1.0 - z)
    return -per_term.mean()


def predict(activations: np.ndarray) -> int:
    """Index of the minimum activation; ties go to the lowest index."""
    a = np.asarray(activations)
    if a.ndim != 1 or a.size == 0:
        raise ContractError(f"predict expects a nonempty vector, got shape {a.shape}")
    return int(np.argmin(a))


def episode_labels(contexts) -> np.ndarray:
    return np.array([c.labels for c in contexts], dtype=np.float64)
