"""Multi-head feedforward value network with hand-rolled backprop and Adam.

Architecture: a shared ReLU trunk feeding K independent ReLU heads with
linear outputs.  Each head k sees transition b only when its bootstrap mask
d[b, k] is set.  The training loss is

    L = sum_k (1/(2B)) sum_b d[b,k] * (target[b,k] - Q_k(s_b, a_b))^2

Head parameters receive the gradient of their own masked term; shared
parameters receive the K head contributions averaged (divided by K), so trunk
updates do not scale with the head count.

Everything is numpy float64.  No autograd, no framework.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class MlpTopology:
    input_dim: int
    shared_layers: tuple[int, ...]
    head_layers: tuple[int, ...]
    output_dim: int
    head_count: int

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.output_dim < 1 or self.head_count < 1:
            raise ValueError("dimensions and head count must be >= 1")
        if any(w < 1 for w in self.shared_layers + self.head_layers):
            raise ValueError("layer widths must be >= 1")


def _he_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _init_stack(rng: np.random.Generator, dims: list[int]) -> list[list[np.ndarray]]:
    return [[_he_uniform(rng, dims[i], dims[i + 1]), np.zeros(dims[i + 1])]
            for i in range(len(dims) - 1)]


class BootstrappedMlp:
    """Shared trunk + K heads; parameters held as [W, b] pairs."""

    def __init__(self, topology: MlpTopology, seed: int) -> None:
        self.topology = topology
        rng = np.random.default_rng(seed)
        shared_dims = [topology.input_dim, *topology.shared_layers]
        self.shared = _init_stack(rng, shared_dims)
        head_dims = [shared_dims[-1], *topology.head_layers, topology.output_dim]
        self.heads = [_init_stack(rng, head_dims)
                      for _ in range(topology.head_count)]

    # -- parameter plumbing ------------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        """Flat view in a stable order: shared pairs, then heads in index order."""
        flat: list[np.ndarray] = []
        for w, b in self.shared:
            flat.extend((w, b))
        for head in self.heads:
            for w, b in head:
                flat.extend((w, b))
        return flat

    def set_parameters(self, values: list[np.ndarray]) -> None:
        own = self.parameters()
        if len(own) != len(values):
            raise ValueError("parameter count mismatch")
        for dst, src in zip(own, values):
            if dst.shape != src.shape:
                raise ValueError("parameter shape mismatch")
            dst[...] = src

    def clone(self) -> "BootstrappedMlp":
        other = BootstrappedMlp(self.topology, seed=0)
        other.set_parameters([p.copy() for p in self.parameters()])
        return other

    # -- forward -----------------------------------------------------------------

    def _trunk(self, x: np.ndarray) -> list[np.ndarray]:
        acts = [x]
        for w, b in self.shared:
            acts.append(np.maximum(acts[-1] @ w + b, 0.0))
        return acts

    def _head(self, k: int, trunk_out: np.ndarray) -> list[np.ndarray]:
        acts = [trunk_out]
        layers = self.heads[k]
        for w, b in layers[:-1]:
            acts.append(np.maximum(acts[-1] @ w + b, 0.0))
        w, b = layers[-1]
        acts.append(acts[-1] @ w + b)
        return acts

    def forward(self, x: np.ndarray) -> np.ndarray:
        """(B, input) -> (K, B, output) Q-values."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        trunk_out = self._trunk(x)[-1]
        return np.stack([self._head(k, trunk_out)[-1]
                         for k in range(self.topology.head_count)])

    # -- loss and gradients --------------------------------------------------------

    def loss_and_gradients(self, x: np.ndarray, actions: np.ndarray,
                           targets: np.ndarray, masks: np.ndarray
                           ) -> tuple[float, list[np.ndarray]]:
        """Masked TD regression loss and gradients in ``parameters()`` order.

        x: (B, input); actions: (B,) ints; targets: (K, B); masks: (B, K) in {0,1}.
        """
        x = np.asarray(x, dtype=float)
        actions = np.asarray(actions, dtype=int)
        targets = np.asarray(targets, dtype=float)
        masks = np.asarray(masks, dtype=float)
        batch = x.shape[0]
        kk = self.topology.head_count
        rows = np.arange(batch)

        trunk_acts = self._trunk(x)
        trunk_out = trunk_acts[-1]

        loss = 0.0
        shared_grads = [[np.zeros_like(w), np.zeros_like(b)]
                        for w, b in self.shared]
        head_grads = []
        trunk_delta_sum = np.zeros_like(trunk_out)

        for k in range(kk):
            acts = self._head(k, trunk_out)
            q_taken = acts[-1][rows, actions]
            err = (q_taken - targets[k]) * masks[:, k]
            loss += float(np.sum(err * (q_taken - targets[k]))) / (2.0 * batch)

            delta = np.zeros_like(acts[-1])
            delta[rows, actions] = err / batch
            grads_k = [None] * len(self.heads[k])
            for i in range(len(self.heads[k]) - 1, -1, -1):
                w, _ = self.heads[k][i]
                grads_k[i] = [acts[i].T @ delta, delta.sum(axis=0)]
                delta = delta @ w.T
                if i > 0:
                    delta = delta * (acts[i] > 0.0)
            head_grads.append(grads_k)
            trunk_delta_sum += delta

        # Eq. for the trunk: average the K head contributions.
        delta = trunk_delta_sum / kk
        for i in range(len(self.shared) - 1, -1, -1):
            delta = delta * (trunk_acts[i + 1] > 0.0)
            w, _ = self.shared[i]
            shared_grads[i][0] = trunk_acts[i].T @ delta
            shared_grads[i][1] = delta.sum(axis=0)
            delta = delta @ w.T

        flat: list[np.ndarray] = []
        for gw, gb in shared_grads:
            flat.extend((gw, gb))
        for grads_k in head_grads:
            for gw, gb in grads_k:
                flat.extend((gw, gb))
        return loss, flat


class Adam:
    """Adam optimizer over a fixed parameter list."""

    def __init__(self, params: list[np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient count mismatch")
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def save_network(path: str | Path, net: BootstrappedMlp,
                 extra_meta: dict | None = None) -> None:
    """Write parameters plus topology (and optional metadata) to one .npz."""
    meta = {
        "topology": {
            "input_dim": net.topology.input_dim,
            "shared_layers": list(net.topology.shared_layers),
            "head_layers": list(net.topology.head_layers),
            "output_dim": net.topology.output_dim,
            "head_count": net.topology.head_count,
        },
        "extra": extra_meta or {},
    }
    arrays = {f"p{i}": p for i, p in enumerate(net.parameters())}
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_network(path: str | Path) -> tuple[BootstrappedMlp, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        t = meta["topology"]
        net = BootstrappedMlp(MlpTopology(
            input_dim=t["input_dim"], shared_layers=tuple(t["shared_layers"]),
            head_layers=tuple(t["head_layers"]), output_dim=t["output_dim"],
            head_count=t["head_count"]), seed=0)
        count = len(net.parameters())
        net.set_parameters([data[f"p{i}"] for i in range(count)])
    return net, meta["extra"]
