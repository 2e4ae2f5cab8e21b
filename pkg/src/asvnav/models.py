"""IQN and DQN navigation models, risk-aware action selection, checkpoints."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import sim
from .nn import MLP, LinearLayer, N_COS, cosine_embedding, relu, relu_backward

FORMAT_VERSION = 1
ENCODER_SLICES = {
    "ego_encoder": slice(0, sim.EGO_DIM),
    "static_encoder": slice(sim.EGO_DIM, sim.EGO_DIM + sim.MAX_STATICS * sim.STATIC_DIM),
    "dynamic_encoder": slice(sim.EGO_DIM + sim.MAX_STATICS * sim.STATIC_DIM, sim.OBS_DIM),
}


def _as_batch(obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if obs.ndim == 1:
        obs = obs[None, :]
    if obs.ndim != 2 or obs.shape[1] != sim.OBS_DIM:
        raise ValueError(f"observation must have length {sim.OBS_DIM}, got shape {obs.shape}")
    return obs


class _Encoders:
    """Ego / static / dynamic encoders whose ReLU outputs are concatenated."""

    def _build_encoders(self, width, rng):
        self.encoder_width = width
        self.encoders = {name: LinearLayer(s.stop - s.start, width, rng) for name, s in ENCODER_SLICES.items()}

    def _encode(self, obs):
        pres, feats = [], []
        for name, s in ENCODER_SLICES.items():
            pre = self.encoders[name].forward(obs[:, s])
            pres.append(pre)
            feats.append(relu(pre))
        return np.concatenate(feats, axis=1), pres

    def _encode_backward(self, obs, pres, dfeat):
        grads = []
        w = self.encoder_width
        for k, (name, s) in enumerate(ENCODER_SLICES.items()):
            dpre = relu_backward(pres[k], dfeat[:, k * w:(k + 1) * w])
            g, _ = self.encoders[name].backward(obs[:, s], dpre)
            grads += g
        return grads

    @property
    def feature_width(self) -> int:
        return 3 * self.encoder_width


class IqnModel(_Encoders):
    """Quantile network: observation features times cosine quantile features."""

    kind = "iqn"

    def __init__(self, rng=None, encoder_width: int = 64, head_width: int = 128):
        self._build_encoders(encoder_width, rng)
        self.head_width = head_width
        self.quantile_encoder = LinearLayer(N_COS, self.feature_width, rng)
        self.head = MLP([self.feature_width, head_width, head_width, sim.N_ACTIONS], rng)

    @property
    def layers(self):
        return [*self.encoders.items(), ("quantile_encoder", self.quantile_encoder),
                *((f"head_{k}", layer) for k, layer in enumerate(self.head.layers))]

    @property
    def params(self):
        return [p for _, layer in self.layers for p in layer.params]

    def forward(self, obs, taus, phi=1.0):
        """Returns quantile values of shape (B, T, 9) and a backward cache.

        ``phi`` is a scalar, one value per observation, or one per tau.
        """
        obs = _as_batch(obs)
        taus = np.asarray(taus, dtype=float)
        if taus.ndim == 1:
            taus = np.broadcast_to(taus, (obs.shape[0], taus.shape[0]))
        B, T = taus.shape
        phi = np.asarray(phi, dtype=float)
        if phi.ndim == 1:
            phi = phi[:, None]
        phi = np.broadcast_to(phi, (B, T))
        feat, pres = self._encode(obs)
        cos = cosine_embedding(taus.reshape(-1), phi.reshape(-1))
        q_pre = self.quantile_encoder.forward(cos)
        q = relu(q_pre).reshape(B, T, -1)
        h = (feat[:, None, :] * q).reshape(B * T, -1)
        out, head_cache = self.head.forward(h)
        cache = (obs, pres, feat, cos, q_pre, q, head_cache)
        return out.reshape(B, T, sim.N_ACTIONS), cache

    def backward(self, cache, grad_out):
        obs, pres, feat, cos, q_pre, q, head_cache = cache
        B, T, _ = q.shape
        head_grads, dh = self.head.backward(head_cache, grad_out.reshape(B * T, sim.N_ACTIONS))
        dh = dh.reshape(B, T, -1)
        dfeat = (dh * q).sum(axis=1)
        dq = (dh * feat[:, None, :]).reshape(B * T, -1)
        dq_pre = relu_backward(q_pre, dq)
        q_grads, _ = self.quantile_encoder.backward(cos, dq_pre)
        return self._encode_backward(obs, pres, dfeat) + q_grads + head_grads


class DqnModel(_Encoders):
    """Same encoders and head as the IQN model, without the quantile path."""

    kind = "dqn"

    def __init__(self, rng=None, encoder_width: int = 64, head_width: int = 128):
        self._build_encoders(encoder_width, rng)
        self.head_width = head_width
        self.head = MLP([self.feature_width, head_width, head_width, sim.N_ACTIONS], rng)

    @property
    def layers(self):
        return [*self.encoders.items(), *((f"head_{k}", layer) for k, layer in enumerate(self.head.layers))]

    @property
    def params(self):
        return [p for _, layer in self.layers for p in layer.params]

    def forward(self, obs):
        obs = _as_batch(obs)
        feat, pres = self._encode(obs)
        out, head_cache = self.head.forward(feat)
        return out, (obs, pres, head_cache)

    def backward(self, cache, grad_out):
        obs, pres, head_cache = cache
        head_grads, dfeat = self.head.backward(head_cache, grad_out)
        return self._encode_backward(obs, pres, dfeat) + head_grads


def build_model(kind: str, rng=None, encoder_width: int = 64, head_width: int = 128):
    if kind == "iqn":
        return IqnModel(rng, encoder_width, head_width)
    if kind == "dqn":
        return DqnModel(rng, encoder_width, head_width)
    raise ValueError(f"unknown model kind {kind!r}")


def copy_params(src, dst) -> None:
    for a, b in zip(src.params, dst.params):
        b[...] = a


@dataclass(frozen=True)
class RiskConfig:
    """CVaR threshold policy: ``greedy`` (phi=1), ``fixed`` or ``adaptive``."""

    mode: str = "greedy"
    phi: float = 1.0
    d0: float = 10.0

    def __post_init__(self):
        if self.mode not in ("greedy", "fixed", "adaptive"):
            raise ValueError(f"unknown risk mode {self.mode!r}")
        if not 0 < self.phi <= 1:
            raise ValueError("phi must lie in (0, 1]")
        if self.d0 <= 0:
            raise ValueError("d0 must be positive")

    def threshold(self, world=None, robot_id=None) -> float:
        if self.mode == "greedy":
            return 1.0
        if self.mode == "fixed":
            return self.phi
        return adaptive_cvar_threshold(world, robot_id, self.d0)


MIN_PHI = 1e-3


def adaptive_cvar_threshold(world, robot_id: int, d0: float = 10.0) -> float:
    """phi = min(d, d0) / d0 for the nearest detected obstacle or robot."""
    if d0 <= 0:
        raise ValueError("d0 must be positive")
    statics, dynamics = world.neighbors(robot_id)
    dists = [d for d, _ in statics] + [d for d, _ in dynamics]
    if not dists:
        return 1.0
    # floor keeps phi inside (0, 1] for coincident centers
    return max(min(min(dists), d0) / d0, MIN_PHI)


def iqn_action_values(model, obs, phis, K: int, rng: np.random.Generator) -> np.ndarray:
    """Mean of K distorted quantile samples per action, shape (B, 9)."""
    obs = _as_batch(obs)
    taus = rng.random((obs.shape[0], K))
    z, _ = model.forward(obs, taus, np.broadcast_to(np.asarray(phis, dtype=float), (obs.shape[0],)))
    return z.mean(axis=1)


def iqn_select_action(model, observation, risk=1.0, K: int = 32, rng=None, world=None, robot_id=None) -> int:
    """Risk-sensitive argmax; ``risk`` is a RiskConfig or a plain phi value.

    np.argmax returns the first maximum, so ties go to the lowest index.
    """
    if rng is None:
        raise ValueError("an explicit rng is required")
    phi = risk.threshold(world, robot_id) if isinstance(risk, RiskConfig) else float(risk)
    return int(np.argmax(iqn_action_values(model, observation, [phi], K, rng)[0]))


def dqn_select_action(model, observation) -> int:
    q, _ = model.forward(observation)
    return int(np.argmax(q[0]))


def iqn_td_deltas(batch, model, target_model, N: int = 8, n_prime: int = 8, gamma: float = 0.99, rng=None,
                  return_cache: bool = False):
    """Sampled TD errors ``r + gamma Z_tau'(s', a*) - Z_tau(s, a)``.

    ``a*`` is the target network's greedy action at s' (phi = 1), scored on
    the same tau' samples. Terminal transitions drop the bootstrap term.
    Returns ``(deltas (B, N, N'), taus (B, N), next_actions)`` and, with
    ``return_cache``, the online forward cache plus taken-action indices.
    """
    s, a, r, s2, done = batch
    B = len(a)
    taus = rng.random((B, N))
    taus_next = rng.random((B, n_prime))
    z_next, _ = target_model.forward(s2, taus_next, 1.0)
    a_next = np.argmax(z_next.mean(axis=1), axis=1)
    z_next_a = z_next[np.arange(B), :, a_next]
    target = np.asarray(r, dtype=float)[:, None] + gamma * (1.0 - np.asarray(done, dtype=float))[:, None] * z_next_a
    z, cache = model.forward(s, taus, 1.0)
    z_a = z[np.arange(B), :, np.asarray(a)]
    deltas = target[:, None, :] - z_a[:, :, None]
    if return_cache:
        return deltas, taus, a_next, cache
    return deltas, taus, a_next


def dqn_targets(batch, target_model, gamma: float = 0.99) -> np.ndarray:
    _, _, r, s2, done = batch
    q_next, _ = target_model.forward(s2)
    return np.asarray(r, dtype=float) + gamma * (1.0 - np.asarray(done, dtype=float)) * q_next.max(axis=1)


class LearnedPolicy:
    """Shared-parameter policy acting for every Active robot in one batch."""

    def __init__(self, model, risk: RiskConfig | None = None, K: int = 32):
        self.model = model
        self.risk = risk or RiskConfig()
        self.K = K

    def act(self, world, ids, rng) -> dict:
        if not ids:
            return {}
        obs = np.stack([world.observe(i) for i in ids])
        if self.model.kind == "dqn":
            values, _ = self.model.forward(obs)
        else:
            phis = [self.risk.threshold(world, i) for i in ids]
            values = iqn_action_values(self.model, obs, phis, self.K, rng)
        return {i: int(k) for i, k in zip(ids, np.argmax(values, axis=1))}


# checkpoints -------------------------------------------------------------

class CheckpointError(ValueError):
    pass


def save_checkpoint(model, path, training_step: int = 0, rng_seed=None) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "model_kind": model.kind,
        "layer_specs": [{"name": name, "in": layer.n_in, "out": layer.n_out} for name, layer in model.layers],
        "params": [p.reshape(-1).tolist() for p in model.params],
        "training_step": int(training_step),
        "rng_seed": rng_seed,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path, expected_kind: str | None = None):
    """Rebuild a model from a JSON checkpoint (``training_step`` and ``rng_seed`` become attributes)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    kind = doc.get("model_kind")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"checkpoint holds a {kind!r} model, expected {expected_kind!r}")
    specs = {s["name"]: s for s in doc["layer_specs"]}
    try:
        model = build_model(kind, None, specs["ego_encoder"]["out"], specs["head_0"]["out"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed layer specs: {exc}") from exc
    expected = [{"name": n, "in": layer.n_in, "out": layer.n_out} for n, layer in model.layers]
    if doc["layer_specs"] != expected:
        raise CheckpointError("layer specs do not match the model architecture")
    if len(doc["params"]) != len(model.params):
        raise CheckpointError("parameter count mismatch")
    for p, flat in zip(model.params, doc["params"]):
        if len(flat) != p.size:
            raise CheckpointError(f"parameter of shape {p.shape} got {len(flat)} values")
        p[...] = np.asarray(flat, dtype=float).reshape(p.shape)
    model.training_step = doc.get("training_step", 0)
    model.rng_seed = doc.get("rng_seed")
    return model
