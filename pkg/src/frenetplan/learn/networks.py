"""MLP and CVAE policies producing behavioural inputs and multiplier warm starts.

Parameters live in plain numpy arrays.  ``forward`` takes a namespace and a
list of parameter values (numpy arrays or tape variables), so one definition
serves inference and training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import npops
from ..errors import ParameterError
from ..sim import OBS_DIM, N_SLOTS, SLOT_WIDTH

POS_SCALE = 50.0

ACTIVATIONS = ("tanh",)


def _layout_masks():
    """Index sets of position-like and speed-like observation entries."""
    pos, vel = [], [1, 2]
    for k in range(N_SLOTS):
        base = 3 + SLOT_WIDTH * k
        pos += [base, base + 1]
        vel += [base + 2, base + 3]
    pos += [OBS_DIM - 2, OBS_DIM - 1]
    return np.array(pos), np.array(vel)


_POS_IDX, _VEL_IDX = _layout_masks()


def normalize_observation(obs, v_max: float) -> np.ndarray:
    """Positions divided by 50 m and speeds by v_max; heading and presence flags untouched."""
    o = np.array(obs, dtype=float, copy=True)
    if o.shape[-1] != OBS_DIM:
        raise ParameterError(f"observations must have {OBS_DIM} entries, got {o.shape[-1]}")
    o[..., _POS_IDX] /= POS_SCALE
    o[..., _VEL_IDX] /= v_max
    return o


@dataclass
class Mlp:
    widths: tuple
    activation: str = "tanh"
    seed: int = 0
    params: list = field(default=None, repr=False)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ParameterError("an MLP needs at least input and output widths >= 1")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unsupported activation {self.activation!r}")
        if self.params is None:
            rng = np.random.default_rng(self.seed)
            self.params = []
            for i, (n_in, n_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
                lim = np.sqrt(6.0 / (n_in + n_out))
                W = rng.uniform(-lim, lim, (n_in, n_out))
                if i == len(self.widths) - 2:
                    W *= 0.1  # start near the middle of the squashed output ranges
                self.params += [W, np.zeros(n_out)]
        else:
            self.params = [np.asarray(p, dtype=float) for p in self.params]
            shapes = [(a, b) for a, b in zip(self.widths[:-1], self.widths[1:])]
            got = [p.shape for p in self.params[::2]]
            if got != shapes:
                raise ParameterError(f"weight shapes {got} do not match widths {self.widths}")

    def forward(self, xp, params, x):
        h = x
        n_layers = len(params) // 2
        for i in range(n_layers):
            h = h @ params[2 * i] + params[2 * i + 1]
            if i < n_layers - 1:
                h = xp.tanh(h)
        return h


@dataclass(frozen=True)
class OutputSpec:
    """How the raw network head maps to (p, lambda)."""

    m_seg: int = 4
    n_xi: int = 22
    v_max: float = 10.0

    @property
    def size(self) -> int:
        return 2 * self.m_seg + self.n_xi


def squash_head(xp, raw, spec: OutputSpec, y_lo, y_hi):
    """Sigmoid-squash the set-points into [y_lo, y_hi] and [0, v_max]; lambda is left free.

    ``y_lo`` / ``y_hi`` are per-sample arrays of shape (B, 1).
    """
    m = spec.m_seg
    y = y_lo + (y_hi - y_lo) * xp.sigmoid(raw[:, :m])
    v = spec.v_max * xp.sigmoid(raw[:, m : 2 * m])
    p = xp.concatenate([y, v], axis=1)
    lam = raw[:, 2 * m :]
    return p, lam


class MlpPolicy:
    """Deterministic map o -> (p, lambda); the mean of the sampling Gaussian at run time."""

    kind = "mlp"

    def __init__(self, spec: OutputSpec = OutputSpec(), hidden=(256, 256), seed: int = 0, params=None):
        self.spec = spec
        self.hidden = tuple(hidden)
        self.net = Mlp((OBS_DIM, *self.hidden, spec.size), seed=seed, params=params)

    @property
    def params(self):
        return self.net.params

    def forward(self, xp, params, obs_n, y_lo, y_hi):
        raw = self.net.forward(xp, params, obs_n)
        return squash_head(xp, raw, self.spec, y_lo, y_hi)

    def __call__(self, obs_n, y_lo, y_hi):
        return self.forward(npops, self.params, obs_n, y_lo, y_hi)


class CvaePolicy:
    """Encoder q(z | o, tau_e) and decoder (z, o) -> (p, lambda)."""

    kind = "cvae"

    def __init__(self, spec: OutputSpec = OutputSpec(), n_steps: int = 100, latent_dim: int = 8,
                 hidden=(256, 256), seed: int = 0, params=None):
        if latent_dim < 1:
            raise ParameterError("latent_dim must be >= 1")
        self.spec = spec
        self.n_steps = n_steps
        self.latent_dim = latent_dim
        self.hidden = tuple(hidden)
        enc_w = (OBS_DIM + 2 * n_steps, *self.hidden, 2 * latent_dim)
        dec_w = (latent_dim + OBS_DIM, *self.hidden, spec.size)
        n_enc = 2 * (len(enc_w) - 1)
        enc_p = None if params is None else params[:n_enc]
        dec_p = None if params is None else params[n_enc:]
        self.encoder = Mlp(enc_w, seed=seed, params=enc_p)
        self.decoder = Mlp(dec_w, seed=seed + 1, params=dec_p)
        self.n_enc = n_enc

    @property
    def params(self):
        return self.encoder.params + self.decoder.params

    def encode(self, xp, params, obs_n, tau_n):
        h = self.encoder.forward(xp, params[: self.n_enc], xp.concatenate([obs_n, tau_n], axis=1))
        k = self.latent_dim
        return h[:, :k], h[:, k:]  # mean, log-variance

    def decode(self, xp, params, z, obs_n, y_lo, y_hi):
        raw = self.decoder.forward(xp, params[self.n_enc :], xp.concatenate([z, obs_n], axis=1))
        return squash_head(xp, raw, self.spec, y_lo, y_hi)

    def sample(self, obs_n, y_lo, y_hi, n: int, rng):
        """Decode ``n`` prior draws for a single observation."""
        obs_b = np.repeat(np.atleast_2d(obs_n), n, axis=0)
        z = rng.standard_normal((n, self.latent_dim))
        lo = np.broadcast_to(np.asarray(y_lo, dtype=float).reshape(-1, 1), (n, 1))
        hi = np.broadcast_to(np.asarray(y_hi, dtype=float).reshape(-1, 1), (n, 1))
        return self.decode(npops, self.params, z, obs_b, lo, hi)
