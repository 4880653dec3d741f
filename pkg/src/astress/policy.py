"""Gaussian disturbance policies with hand-rolled differentiation.

Two function approximators map rollout inputs to the mean of a diagonal
Gaussian over disturbances (in model sigma units): a single-layer LSTM for
recurrent policies and a one-hidden-layer tanh MLP. Log standard deviations
are state-independent trainable parameters, stored as the last `action_dim`
coordinates of the flat parameter vector for either architecture.

Both architectures implement the same interface over padded batches:
`forward` (means plus a cache), `vjp` (reverse mode: upstream mean gradients
to a flat parameter gradient), and `jvp` (forward mode: a parameter
direction to mean perturbations). Composing them gives exact Fisher-vector
products for the natural-gradient solver without any autodiff dependency.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

CHECKPOINT_MAGIC = b"ASTPOLV1"


class ParamLayout:
    """Named views into a flat parameter vector."""

    def __init__(self, shapes: dict[str, tuple[int, ...]]):
        self.shapes = dict(shapes)
        self.offsets: dict[str, int] = {}
        off = 0
        for name, shape in self.shapes.items():
            self.offsets[name] = off
            off += int(np.prod(shape))
        self.total = off

    def view(self, theta: np.ndarray, name: str) -> np.ndarray:
        """A reshaped slice sharing memory with `theta`."""
        off = self.offsets[name]
        shape = self.shapes[name]
        return theta[off : off + int(np.prod(shape))].reshape(shape)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.total)


def _sigmoid(z):
    # Clipped for stability far from the origin; saturation is exact there.
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


def _check_input(x, input_dim, who):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != input_dim:
        raise ValueError(f"{who} expects input dim {input_dim}, got {x.shape[-1]}")
    return x


class LstmPolicy:
    """Single-layer LSTM with a linear mean head.

    Gate preactivations stack as [input, forget, output, candidate]. With all
    parameters zero the sigmoid gates sit at 0.5, the candidate at 0, so the
    first cell state, hidden state, and mean are all exactly zero.
    """

    kind = "lstm"

    def __init__(self, input_dim: int, hidden_dim: int = 64, action_dim: int = 6):
        if min(input_dim, hidden_dim, action_dim) < 1:
            raise ValueError("dimensions must be positive")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.action_dim = action_dim
        h, d, a = hidden_dim, input_dim, action_dim
        self.layout = ParamLayout(
            {
                "w_x": (4 * h, d),
                "w_h": (4 * h, h),
                "b": (4 * h,),
                "w_out": (a, h),
                "b_out": (a,),
                "log_std": (a,),
            }
        )

    @property
    def param_count(self) -> int:
        return self.layout.total

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Orthogonal recurrences, fan-in-scaled inputs, forget bias 1.

        The output head starts near zero so the initial policy stays close
        to the disturbance-model mean.
        """
        theta = self.layout.zeros()
        h, d = self.hidden_dim, self.input_dim
        lim = 1.0 / np.sqrt(d)
        self.layout.view(theta, "w_x")[:] = rng.uniform(-lim, lim, (4 * h, d))
        w_h = self.layout.view(theta, "w_h")
        for block in range(4):
            q, _ = np.linalg.qr(rng.normal(size=(h, h)))
            w_h[block * h : (block + 1) * h, :] = q
        self.layout.view(theta, "b")[h : 2 * h] = 1.0
        self.layout.view(theta, "w_out")[:] = rng.normal(0, 0.01, (self.action_dim, h))
        return theta

    def log_std(self, theta: np.ndarray) -> np.ndarray:
        return theta[-self.action_dim :]

    def initial_state(self):
        h = np.zeros(self.hidden_dim)
        return (h, h.copy())

    def step(self, theta, x, state):
        """One recurrent step; returns (mean, next state)."""
        x = _check_input(x, self.input_dim, "lstm step")
        hid, cell = state
        L, H = self.layout, self.hidden_dim
        z = L.view(theta, "w_x") @ x + L.view(theta, "w_h") @ hid + L.view(theta, "b")
        gi = _sigmoid(z[:H])
        gf = _sigmoid(z[H : 2 * H])
        go = _sigmoid(z[2 * H : 3 * H])
        gc = np.tanh(z[3 * H :])
        cell2 = gf * cell + gi * gc
        hid2 = go * np.tanh(cell2)
        mean = L.view(theta, "w_out") @ hid2 + L.view(theta, "b_out")
        return mean, (hid2, cell2)

    def forward(self, theta, inputs, lengths):
        """Padded-batch forward pass.

        inputs: (B, T, input_dim); lengths: (B,) valid prefix lengths.
        Returns means (B, T, action_dim) and the cache for vjp/jvp.
        """
        inputs = _check_input(inputs, self.input_dim, "lstm forward")
        if inputs.ndim != 3:
            raise ValueError(f"expected (batch, time, dim) inputs, got {inputs.shape}")
        B, T, _ = inputs.shape
        lengths = np.asarray(lengths, dtype=int)
        if lengths.shape != (B,) or lengths.max(initial=0) > T:
            raise ValueError("lengths must be (batch,) and bounded by the time axis")
        L, H = self.layout, self.hidden_dim
        w_x = L.view(theta, "w_x")
        w_h = L.view(theta, "w_h")
        b = L.view(theta, "b")
        w_out = L.view(theta, "w_out")
        b_out = L.view(theta, "b_out")

        hid = np.zeros((B, H))
        cell = np.zeros((B, H))
        means = np.zeros((B, T, self.action_dim))
        steps = []
        for t in range(T):
            x = inputs[:, t, :]
            z = x @ w_x.T + hid @ w_h.T + b
            gi = _sigmoid(z[:, :H])
            gf = _sigmoid(z[:, H : 2 * H])
            go = _sigmoid(z[:, 2 * H : 3 * H])
            gc = np.tanh(z[:, 3 * H :])
            cell2 = gf * cell + gi * gc
            tc = np.tanh(cell2)
            hid2 = go * tc
            means[:, t, :] = hid2 @ w_out.T + b_out
            steps.append((x, hid, cell, gi, gf, go, gc, tc, hid2))
            hid, cell = hid2, cell2
        mask = (np.arange(T)[None, :] < lengths[:, None]).astype(float)
        cache = {"steps": steps, "mask": mask, "theta": theta, "shape": (B, T)}
        return means, cache

    def vjp(self, cache, dmeans):
        """Backpropagate mean cotangents to a flat parameter gradient.

        Padded steps are masked out. The log-std coordinates of the result
        are zero; they do not influence the mean.
        """
        L, H = self.layout, self.hidden_dim
        theta = cache["theta"]
        B, T = cache["shape"]
        dmeans = np.asarray(dmeans, dtype=float) * cache["mask"][:, :, None]
        w_h = L.view(theta, "w_h")
        w_out = L.view(theta, "w_out")

        grad = self.layout.zeros()
        g_wx = L.view(grad, "w_x")
        g_wh = L.view(grad, "w_h")
        g_b = L.view(grad, "b")
        g_wo = L.view(grad, "w_out")
        g_bo = L.view(grad, "b_out")

        dhid = np.zeros((B, H))
        dcell = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            x, hid_p, cell_p, gi, gf, go, gc, tc, hid2 = cache["steps"][t]
            dm = dmeans[:, t, :]
            g_wo += dm.T @ hid2
            g_bo += dm.sum(axis=0)
            dh = dhid + dm @ w_out
            d_go = dh * tc
            dc = dcell + dh * go * (1.0 - tc * tc)
            d_gi = dc * gc
            d_gc = dc * gi
            d_gf = dc * cell_p
            dcell = dc * gf
            dz = np.concatenate(
                [
                    d_gi * gi * (1.0 - gi),
                    d_gf * gf * (1.0 - gf),
                    d_go * go * (1.0 - go),
                    d_gc * (1.0 - gc * gc),
                ],
                axis=1,
            )
            g_wx += dz.T @ x
            g_wh += dz.T @ hid_p
            g_b += dz.sum(axis=0)
            dhid = dz @ w_h
        return grad

    def jvp(self, cache, v):
        """Forward-mode directional derivative of the means along `v`."""
        L, H = self.layout, self.hidden_dim
        theta = cache["theta"]
        B, T = cache["shape"]
        w_h = L.view(theta, "w_h")
        w_out = L.view(theta, "w_out")
        v = np.asarray(v, dtype=float)
        v_wx = L.view(v, "w_x")
        v_wh = L.view(v, "w_h")
        v_b = L.view(v, "b")
        v_wo = L.view(v, "w_out")
        v_bo = L.view(v, "b_out")

        dhid = np.zeros((B, H))
        dcell = np.zeros((B, H))
        dmeans = np.zeros((B, T, self.action_dim))
        for t in range(T):
            x, hid_p, cell_p, gi, gf, go, gc, tc, hid2 = cache["steps"][t]
            dz = x @ v_wx.T + hid_p @ v_wh.T + dhid @ w_h.T + v_b
            d_gi = gi * (1.0 - gi) * dz[:, :H]
            d_gf = gf * (1.0 - gf) * dz[:, H : 2 * H]
            d_go = go * (1.0 - go) * dz[:, 2 * H : 3 * H]
            d_gc = (1.0 - gc * gc) * dz[:, 3 * H :]
            dcell = d_gf * cell_p + gf * dcell + d_gi * gc + gi * d_gc
            dhid = d_go * tc + go * (1.0 - tc * tc) * dcell
            dmeans[:, t, :] = hid2 @ v_wo.T + dhid @ w_out.T + v_bo
        return dmeans * cache["mask"][:, :, None]


class MlpPolicy:
    """One tanh hidden layer with a linear mean head; memoryless."""

    kind = "mlp"

    def __init__(self, input_dim: int, hidden_dim: int = 64, action_dim: int = 6):
        if min(input_dim, hidden_dim, action_dim) < 1:
            raise ValueError("dimensions must be positive")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.action_dim = action_dim
        self.layout = ParamLayout(
            {
                "w1": (hidden_dim, input_dim),
                "b1": (hidden_dim,),
                "w2": (action_dim, hidden_dim),
                "b2": (action_dim,),
                "log_std": (action_dim,),
            }
        )

    @property
    def param_count(self) -> int:
        return self.layout.total

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        theta = self.layout.zeros()
        lim = 1.0 / np.sqrt(self.input_dim)
        self.layout.view(theta, "w1")[:] = rng.uniform(
            -lim, lim, (self.hidden_dim, self.input_dim)
        )
        self.layout.view(theta, "w2")[:] = rng.normal(0, 0.01, (self.action_dim, self.hidden_dim))
        return theta

    def log_std(self, theta: np.ndarray) -> np.ndarray:
        return theta[-self.action_dim :]

    def initial_state(self):
        return None

    def step(self, theta, x, state):
        x = _check_input(x, self.input_dim, "mlp step")
        L = self.layout
        hid = np.tanh(L.view(theta, "w1") @ x + L.view(theta, "b1"))
        mean = L.view(theta, "w2") @ hid + L.view(theta, "b2")
        return mean, None

    def forward(self, theta, inputs, lengths):
        inputs = _check_input(inputs, self.input_dim, "mlp forward")
        if inputs.ndim != 3:
            raise ValueError(f"expected (batch, time, dim) inputs, got {inputs.shape}")
        B, T, _ = inputs.shape
        lengths = np.asarray(lengths, dtype=int)
        if lengths.shape != (B,) or lengths.max(initial=0) > T:
            raise ValueError("lengths must be (batch,) and bounded by the time axis")
        L = self.layout
        hid = np.tanh(inputs @ L.view(theta, "w1").T + L.view(theta, "b1"))
        means = hid @ L.view(theta, "w2").T + L.view(theta, "b2")
        mask = (np.arange(T)[None, :] < lengths[:, None]).astype(float)
        cache = {"inputs": inputs, "hid": hid, "mask": mask, "theta": theta}
        return means, cache

    def vjp(self, cache, dmeans):
        L = self.layout
        theta = cache["theta"]
        dmeans = np.asarray(dmeans, dtype=float) * cache["mask"][:, :, None]
        inputs, hid = cache["inputs"], cache["hid"]
        w2 = L.view(theta, "w2")

        grad = self.layout.zeros()
        dm = dmeans.reshape(-1, self.action_dim)
        h2 = hid.reshape(-1, self.hidden_dim)
        x2 = inputs.reshape(-1, self.input_dim)
        L.view(grad, "w2")[:] = dm.T @ h2
        L.view(grad, "b2")[:] = dm.sum(axis=0)
        dh = (dm @ w2) * (1.0 - h2 * h2)
        L.view(grad, "w1")[:] = dh.T @ x2
        L.view(grad, "b1")[:] = dh.sum(axis=0)
        return grad

    def jvp(self, cache, v):
        L = self.layout
        theta = cache["theta"]
        inputs, hid = cache["inputs"], cache["hid"]
        v = np.asarray(v, dtype=float)
        dz = inputs @ L.view(v, "w1").T + L.view(v, "b1")
        dh = (1.0 - hid * hid) * dz
        dmeans = hid @ L.view(v, "w2").T + dh @ L.view(theta, "w2").T + L.view(v, "b2")
        return dmeans * cache["mask"][:, :, None]


def make_policy(kind: str, input_dim: int, hidden_dim: int = 64, action_dim: int = 6):
    if kind == "lstm":
        return LstmPolicy(input_dim, hidden_dim, action_dim)
    if kind == "mlp":
        return MlpPolicy(input_dim, hidden_dim, action_dim)
    raise ValueError(f"unknown policy kind {kind!r}")


# ---------------------------------------------------------------------------
# Diagonal-Gaussian head.

LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_log_prob(means, log_std, actions):
    """Log density of `actions`, summed over action components.

    Broadcasting: means/actions (..., A), log_std (A,).
    """
    z = (np.asarray(actions) - means) / np.exp(log_std)
    return -0.5 * (z * z).sum(axis=-1) - log_std.sum() - 0.5 * LOG_2PI * means.shape[-1]


def gaussian_kl(mean_a, log_std_a, mean_b, log_std_b):
    """KL(a || b) between diagonal Gaussians, summed over components."""
    var_a = np.exp(2.0 * log_std_a)
    var_b = np.exp(2.0 * log_std_b)
    d = np.asarray(mean_b) - np.asarray(mean_a)
    per = (log_std_b - log_std_a) + (var_a + d * d) / (2.0 * var_b) - 0.5
    return per.sum(axis=-1)


def sample_gaussian(mean, log_std, rng: np.random.Generator):
    return mean + np.exp(log_std) * rng.standard_normal(mean.shape)


def fisher_vector_product(policy, cache, log_std, v, n_samples, damping=0.0):
    """Exact Gauss-Newton Fisher product for the diagonal-Gaussian policy.

    Mean block: J^T diag(1/sigma^2) J / N via one jvp and one vjp through
    the network. Log-std block: the Fisher of a Gaussian in log-sigma
    coordinates is exactly 2 per component, independent of the state.
    Cross-blocks vanish. `n_samples` is the number of valid timesteps the
    cache represents.
    """
    v = np.asarray(v, dtype=float)
    a = len(log_std)
    dmeans = policy.jvp(cache, v)
    fv = policy.vjp(cache, dmeans / np.exp(2.0 * log_std)) / float(n_samples)
    fv[-a:] = 2.0 * v[-a:]
    return fv + damping * v


# ---------------------------------------------------------------------------
# Checkpoints: magic, JSON metadata, little-endian float64 parameters.


@dataclass(frozen=True)
class Checkpoint:
    policy: object
    theta: np.ndarray
    extra: dict


def save_policy(path, policy, theta, extra: dict | None = None) -> None:
    """Write a versioned binary checkpoint."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (policy.param_count,):
        raise ValueError(
            f"parameter vector has {theta.shape}, policy needs ({policy.param_count},)"
        )
    meta = {
        "kind": policy.kind,
        "input_dim": policy.input_dim,
        "hidden_dim": policy.hidden_dim,
        "action_dim": policy.action_dim,
        "param_count": policy.param_count,
        "extra": extra or {},
    }
    blob = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(theta.astype("<f8").tobytes())


def load_policy(path) -> Checkpoint:
    """Read a checkpoint written by :func:`save_policy`."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a policy checkpoint: bad magic {magic!r}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        raw = fh.read()
    theta = np.frombuffer(raw, dtype="<f8").astype(float)
    policy = make_policy(meta["kind"], meta["input_dim"], meta["hidden_dim"], meta["action_dim"])
    if theta.shape != (meta["param_count"],) or policy.param_count != meta["param_count"]:
        raise ValueError("checkpoint parameter count does not match its metadata")
    return Checkpoint(policy=policy, theta=theta, extra=meta.get("extra", {}))
