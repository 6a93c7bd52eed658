"""Policy / value / Q networks built from the nn toolkit."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..nn import Dense, Dropout, Gru, Mlp

HIDDEN = (64, 64)
GRU_HIDDEN = 32


class FeedForwardNet:
    """Flat observation -> MLP(64, 64, tanh) -> linear output."""

    def __init__(self, obs_dim, n_out, rng, out_gain=1.0, hidden=HIDDEN, name="ff"):
        self.obs_dim = obs_dim
        self.n_out = n_out
        self.mlp = Mlp((obs_dim, *hidden, n_out), rng, out_gain=out_gain, name=name)

    def params(self):
        return self.mlp.params()

    def forward(self, obs, training=False, rng=None):
        return self.mlp.forward(obs)

    def backward(self, dout):
        self.mlp.backward(dout)


class ForecastNet:
    """Forecast-aware network.

    The observation is ``[base (base_dim) | block (horizon * channels)]``.
    The base part goes through a 2x64 tanh trunk, the block through a GRU
    whose final hidden state is dropped out (training only) and concatenated
    with the trunk output before a linear head.
    """

    def __init__(self, base_dim, horizon, channels, n_out, rng, out_gain=1.0, hidden=HIDDEN,
                 gru_hidden=GRU_HIDDEN, dropout=0.10, name="fnet"):
        self.base_dim, self.horizon, self.channels = base_dim, horizon, channels
        self.obs_dim = base_dim + horizon * channels
        self.n_out = n_out
        self.trunk = Mlp((base_dim, *hidden), rng, tanh_output=True, name=name + ".trunk")
        self.gru = Gru(channels, gru_hidden, rng, name=name + ".gru")
        self.drop = Dropout(dropout)
        self.head = Dense(hidden[-1] + gru_hidden, n_out, rng, gain=out_gain, name=name + ".head")
        self._split = hidden[-1]

    def params(self):
        return self.trunk.params() + self.gru.params() + self.head.params()

    def forward(self, obs, training=False, rng=None):
        obs = np.atleast_2d(obs)
        if obs.shape[1] != self.obs_dim:
            raise ShapeError(f"expected observation width {self.obs_dim}, got {obs.shape[1]}")
        base = obs[:, :self.base_dim]
        block = obs[:, self.base_dim:].reshape(len(obs), self.horizon, self.channels)
        enc = self.drop.forward(self.gru.forward(block), training, rng)
        return self.head.forward(np.concatenate([self.trunk.forward(base), enc], axis=1))

    def backward(self, dout):
        dcat = self.head.backward(dout)
        self.trunk.backward(dcat[:, :self._split])
        self.gru.backward(self.drop.backward(dcat[:, self._split:]))


def make_net(obs_dim, n_out, rng, forecast_shape=None, out_gain=1.0, dropout=0.10, name="net"):
    """``forecast_shape`` is ``(base_dim, horizon, channels)`` for forecast-aware observations, else None."""
    if forecast_shape is None:
        return FeedForwardNet(obs_dim, n_out, rng, out_gain=out_gain, name=name)
    base_dim, horizon, channels = forecast_shape
    if base_dim + horizon * channels != obs_dim:
        raise ShapeError(f"forecast layout {forecast_shape} does not add up to obs_dim {obs_dim}")
    return ForecastNet(base_dim, horizon, channels, n_out, rng, out_gain=out_gain, dropout=dropout, name=name)
