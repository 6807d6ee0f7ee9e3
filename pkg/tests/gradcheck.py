"""Central finite-difference oracle and random composite graphs for gradient checks."""

from __future__ import annotations

import numpy as np

from pfsynth.numcore import Tensor, bce_loss
from pfsynth.numcore import layers as L
from pfsynth.numcore.tensor import flatten, reshape

STEP = 1e-3


def numeric_grad(f, arrays: dict[str, np.ndarray], step: float = STEP):
    """Central differences of ``f`` w.r.t. each array (mutated in place and restored).

    ``f`` returns ``(value, signature)``. Coordinates whose perturbation changes
    the signature (a ReLU mask or pool argmax flipped) are marked invalid.
    """
    _, base_sig = f()
    grads, valid = {}, {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        ok = np.ones(arr.shape, dtype=bool)
        flat, gf, of = arr.reshape(-1), g.reshape(-1), ok.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up, sig_up = f()
            flat[i] = orig - step
            down, sig_down = f()
            flat[i] = orig
            gf[i] = (up - down) / (2 * step)
            of[i] = sig_up == base_sig and sig_down == base_sig
        grads[name], valid[name] = g, ok
    return grads, valid


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


class RandomGraph:
    """x -> conv2d -> act -> maxpool -> conv2d_transpose -> act -> flatten|reshape
    -> dense -> act -> dense -> sigmoid -> bce, with randomized layer settings."""

    ACTS = ("relu", "leaky_relu", "sigmoid", "tanh")

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        n = 2
        h = int(rng.integers(4, 8))
        w = int(rng.integers(4, 8))
        c = int(rng.integers(1, 4))
        self.conv = dict(k=int(rng.integers(1, 4)), s=int(rng.integers(1, 3)), pad=str(rng.choice(["same", "valid"])))
        f1 = int(rng.integers(1, 4))
        self.act1 = str(rng.choice(self.ACTS))
        self.pool = dict(k=2, s=int(rng.integers(1, 3)))
        self.convt = dict(k=int(rng.integers(1, 4)), s=int(rng.integers(1, 3)), pad=str(rng.choice(["same", "valid"])))
        f2 = int(rng.integers(1, 3))
        self.act2 = str(rng.choice(self.ACTS))
        self.act3 = str(rng.choice(self.ACTS))
        self.use_reshape = bool(rng.integers(0, 2))
        hidden = int(rng.integers(2, 5))
        out = int(rng.integers(1, 3))

        # conv output must leave room for a 2x2 pool
        h1 = L.conv_output_size(h, self.conv["k"], self.conv["s"], self.conv["pad"]) if h >= self.conv["k"] else 0
        w1 = L.conv_output_size(w, self.conv["k"], self.conv["s"], self.conv["pad"]) if w >= self.conv["k"] else 0
        if h1 < 2 or w1 < 2:
            self.conv["s"] = 1
            self.conv["pad"] = "same"
            h1, w1 = h, w
        hp = (h1 - 2) // self.pool["s"] + 1
        wp = (w1 - 2) // self.pool["s"] + 1
        ht = L.transpose_output_size(hp, self.convt["k"], self.convt["s"], self.convt["pad"])
        wt = L.transpose_output_size(wp, self.convt["k"], self.convt["s"], self.convt["pad"])
        flat = ht * wt * f2

        scale = 0.6
        self.arrays = {
            "x": rng.normal(size=(n, h, w, c)),
            "cw": rng.normal(scale=scale, size=(self.conv["k"], self.conv["k"], c, f1)),
            "cb": rng.normal(scale=0.1, size=(f1,)),
            "tw": rng.normal(scale=scale, size=(self.convt["k"], self.convt["k"], f2, f1)),
            "tb": rng.normal(scale=0.1, size=(f2,)),
            "d1w": rng.normal(scale=1.0 / np.sqrt(flat), size=(flat, hidden)),
            "d1b": rng.normal(scale=0.1, size=(hidden,)),
            "d2w": rng.normal(scale=0.8, size=(hidden, out)),
            "d2b": np.zeros(out),
        }
        self.target = rng.integers(0, 2, size=(n, out)).astype(np.float64)
        self.flat = flat
        self.sig: list[bytes] = []

    def _mark(self, pre: np.ndarray, kind: str) -> None:
        if kind in ("relu", "leaky_relu"):
            self.sig.append(np.packbits(pre > 0).tobytes())

    def _mark_pool(self, x: np.ndarray) -> None:
        k, s = self.pool["k"], self.pool["s"]
        win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
        self.sig.append(win.reshape(*win.shape[:4], -1).argmax(axis=-1).tobytes())

    def loss(self, tensors: dict[str, Tensor], track: bool = False) -> Tensor:
        t = tensors
        y = L.conv2d(t["x"], t["cw"], t["cb"], self.conv["s"], self.conv["pad"])
        if track:
            self._mark(y.data, self.act1)
        y = L.activation_apply(y, self.act1)
        if track:
            self._mark_pool(y.data)
        y = L.maxpool2d(y, self.pool["k"], self.pool["s"])
        y = L.conv2d_transpose(y, t["tw"], t["tb"], self.convt["s"], self.convt["pad"])
        if track:
            self._mark(y.data, self.act2)
        y = L.activation_apply(y, self.act2)
        y = reshape(y, (y.shape[0], self.flat)) if self.use_reshape else flatten(y)
        y = L.dense(y, t["d1w"], t["d1b"])
        if track:
            self._mark(y.data, self.act3)
        y = L.activation_apply(y, self.act3)
        y = L.dense(y, t["d2w"], t["d2b"])
        y = L.sigmoid(y)
        return bce_loss(y, Tensor(self.target))

    def _value(self) -> tuple[float, tuple[bytes, ...]]:
        self.sig = []
        val = self.loss({k: Tensor(v) for k, v in self.arrays.items()}, track=True).item()
        return val, tuple(self.sig)

    def check(self) -> float:
        """Max relative error between autodiff and central differences over all
        tensors, ignoring coordinates whose perturbation crosses a kink."""
        tensors = {k: Tensor(v, requires_grad=True) for k, v in self.arrays.items()}
        self.loss(tensors).backward()
        numeric, valid = numeric_grad(self._value, self.arrays)
        return max(rel_error(tensors[k].grad[valid[k]], numeric[k][valid[k]]) for k in self.arrays)
