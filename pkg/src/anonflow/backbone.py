"""Factorized frame-reconstruction model.

Content enters through a fixed random token embedding pushed through the
VQ bottleneck, pitch through the median-centered semitone contour, and
speaker identity through global conditioning of the flow field.  Frames
are modeled independently: each one is a separate flow-matching sample.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DivergenceError, InputError
from .flowmath import IntegrationSpec, cfm_loss, integrate
from .nets import ConditionedField
from .optim import AdamW, OneCycle
from .vq import Codebook, codebook_grad, quantize
from .worldgen import Dataset, oracle_extract_speaker


@dataclass
class BackboneConfig:
    content_dim: int = 16
    hidden: tuple = (96, 96)
    time_dim: int = 16
    codebook_size: int = 96
    beta: float = 0.25
    lam: float = 1.0             # weight on the commitment loss
    steps: int = 5000
    batch: int = 256
    peak_lr: float = 2.0e-3
    pct_start: float = 0.1
    weight_decay: float = 1.0e-4
    f_sem_noise: float = 0.05
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hidden"] = tuple(d.get("hidden", (96, 96)))
        return cls(**d)


class BackboneModel:
    def __init__(self, frame_dim: int, speaker_dim: int, vocab_size: int,
                 config: BackboneConfig):
        self.frame_dim = frame_dim
        self.speaker_dim = speaker_dim
        self.vocab_size = vocab_size
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.token_embed = rng.standard_normal((vocab_size, config.content_dim))
        self.field = ConditionedField(
            dim=frame_dim, local_dim=config.content_dim + 1,
            cond_dim=speaker_dim, hidden=config.hidden,
            time_dim=config.time_dim, rng=rng, dtype=np.float32)
        self.codebook = Codebook(
            entries=np.zeros((config.codebook_size, config.content_dim)),
            beta=config.beta)

    def f_sem(self, frame_tokens, rng=None) -> np.ndarray:
        """Per-frame content features: fixed token embedding plus small noise."""
        f = self.token_embed[np.asarray(frame_tokens, dtype=int)]
        if rng is not None and self.config.f_sem_noise > 0:
            f = f + self.config.f_sem_noise * rng.standard_normal(f.shape)
        return f

    def local_cond(self, frame_tokens, p_norm, rng=None):
        """(c_vq, p_norm) channels concatenated for the field's local input."""
        res = quantize(self.f_sem(frame_tokens, rng), self.codebook)
        local = np.concatenate([res.c_vq, np.asarray(p_norm)[:, None]], axis=1)
        return local, res

    def tensors(self) -> dict:
        out = {f"backbone/{k}": v for k, v in self.field.params.items()}
        out["backbone/token_embed"] = self.token_embed
        out["backbone/codebook"] = self.codebook.entries
        return out

    def load_tensors(self, tensors: dict) -> None:
        for k in self.field.params:
            self.field.params[k] = np.asarray(tensors[f"backbone/{k}"],
                                              dtype=self.field.dtype)
        self.token_embed = np.asarray(tensors["backbone/token_embed"], dtype=float)
        self.codebook.entries = np.asarray(tensors["backbone/codebook"], dtype=float)


def train_backbone(dataset: Dataset, config: BackboneConfig,
                   rng: np.random.Generator):
    """Composite-loss training over frame-level flow samples.

    Returns (model, loss_trace); the trace holds per-step flow and
    commitment losses plus the scheduled learning rate.
    """
    p = dataset.params
    model = BackboneModel(frame_dim=p.F, speaker_dim=p.D, vocab_size=p.V,
                          config=config)

    x1 = np.concatenate([u.frames for u in dataset.utterances], axis=0)
    toks = np.concatenate([u.frame_tokens for u in dataset.utterances])
    pn = np.concatenate([u.p_norm for u in dataset.utterances])
    spk = np.concatenate([
        np.tile(oracle_extract_speaker(u, p), (u.n_frames, 1))
        for u in dataset.utterances], axis=0)
    n = x1.shape[0]

    # codebook init: one clean content feature per token when the book is
    # large enough (rare tokens keep their own codeword), remaining entries
    # from noisy data samples; otherwise plain data-sample init
    k = config.codebook_size
    if k >= p.V:
        entries = np.empty((k, config.content_dim))
        entries[:p.V] = model.f_sem(np.arange(p.V))
        if k > p.V:
            extra = rng.choice(n, size=k - p.V, replace=n < k - p.V)
            entries[p.V:] = model.f_sem(toks[extra], rng)
        model.codebook.entries = entries
    else:
        init_idx = rng.choice(n, size=k, replace=n < k)
        model.codebook.entries = model.f_sem(toks[init_idx], rng).copy()

    params = dict(model.field.params)
    params["codebook"] = model.codebook.entries
    sched = OneCycle(config.steps, config.peak_lr, config.pct_start)
    opt = AdamW(params, sched, weight_decay=config.weight_decay)

    trace = []
    for step in range(config.steps):
        idx = rng.choice(n, size=min(config.batch, n), replace=False)
        local, res = model.local_cond(toks[idx], pn[idx], rng)
        l_flow, grads = cfm_loss(model.field, x1[idx], (local, spk[idx]), rng)
        f = model.f_sem(toks[idx])  # commitment gradient w.r.t. codewords
        grads["codebook"] = config.lam * codebook_grad(f, res, model.codebook)
        l_commit = res.commit_loss
        total = config.lam * l_commit + l_flow
        if not np.isfinite(total):
            raise DivergenceError(f"non-finite loss at step {step}", step=step)
        opt.step(grads)
        trace.append({"step": step, "l_flow": l_flow, "l_commit": l_commit,
                      "lr": opt.lr})
    model.field.params = {k: v for k, v in params.items() if k != "codebook"}
    model.codebook.entries = params["codebook"]
    return model, trace


def reconstruct(model: BackboneModel, frame_tokens, p_norm, s,
                spec: IntegrationSpec, rng: np.random.Generator) -> np.ndarray:
    """Integrate the frame flow from per-frame Gaussian noise at times 0 -> 1."""
    if not (spec.t_start == 0.0 and spec.t_end == 1.0):
        raise InputError("reconstruction integrates forward from t=0 to t=1")
    frame_tokens = np.asarray(frame_tokens, dtype=int)
    t_frames = frame_tokens.shape[0]
    local, _ = model.local_cond(frame_tokens, p_norm, rng=None)
    s = np.asarray(s, dtype=float)
    cond = (local, np.tile(s, (t_frames, 1)))
    x0 = rng.standard_normal((t_frames, model.frame_dim))
    return integrate(model.field, x0, spec, cond)


def save_backbone(model: BackboneModel, path_prefix) -> None:
    prefix = Path(path_prefix)
    save_checkpoint(prefix.with_suffix(".ckpt"), model.tensors())
    meta = {"frame_dim": model.frame_dim, "speaker_dim": model.speaker_dim,
            "vocab_size": model.vocab_size, "config": model.config.to_dict()}
    prefix.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n")


def load_backbone(path_prefix) -> BackboneModel:
    prefix = Path(path_prefix)
    try:
        meta = json.loads(prefix.with_suffix(".json").read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"missing backbone metadata: {e}") from e
    model = BackboneModel(frame_dim=meta["frame_dim"],
                          speaker_dim=meta["speaker_dim"],
                          vocab_size=meta["vocab_size"],
                          config=BackboneConfig.from_dict(meta["config"]))
    model.load_tensors(load_checkpoint(prefix.with_suffix(".ckpt")))
    return model
