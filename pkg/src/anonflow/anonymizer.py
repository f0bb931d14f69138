"""Speaker-embedding anonymizer.

A flow-matching field over the speaker-embedding space supports a
three-stage pipeline: encode the original embedding backward to its
Gaussian preimage, blend that preimage with fresh noise under a
variance-preserving speaker weight, and integrate forward again to a
pseudo-speaker embedding.  An embedding-pool strategy (draw a real
embedding of a different speaker) is provided as an ablation alternative.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DivergenceError, InputError
from .flowmath import IntegrationSpec, cfm_loss, integrate
from .nets import UShapedField
from .optim import AdamW, OneCycle

from .backbone import BackboneModel, reconstruct
from .worldgen import Dataset, Utterance


@dataclass
class AnonymizerConfig:
    level_dims: tuple = (16, 8, 4, 2, 4, 8, 16)
    time_dim: int = 16
    steps: int = 8000
    batch: int = 128
    peak_lr: float = 3.0e-3
    pct_start: float = 0.1
    weight_decay: float = 1.0e-4
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["level_dims"] = list(self.level_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["level_dims"] = tuple(d.get("level_dims", (16, 8, 4, 2, 4, 8, 16)))
        return cls(**d)


class AnonymizerModel:
    def __init__(self, config: AnonymizerConfig, metadata: dict | None = None):
        self.config = config
        self.field = UShapedField(config.level_dims, time_dim=config.time_dim,
                                  rng=np.random.default_rng(config.seed),
                                  dtype=np.float32)
        self.dim = self.field.dim
        self.metadata = metadata or {}

    def tensors(self) -> dict:
        return {f"anonymizer/{k}": v for k, v in self.field.params.items()}

    def load_tensors(self, tensors: dict) -> None:
        for k in self.field.params:
            self.field.params[k] = np.asarray(tensors[f"anonymizer/{k}"],
                                              dtype=self.field.dtype)


def train_anonymizer(embeddings, config: AnonymizerConfig,
                     rng: np.random.Generator):
    """Flow-matching training on a set of speaker embeddings.

    Returns (model, loss_trace).
    """
    emb = np.asarray(embeddings, dtype=float)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise InputError("need at least 2 embeddings of shape (N, D)")
    if emb.shape[1] != config.level_dims[0]:
        raise ConfigError(f"embedding dim {emb.shape[1]} != field dim "
                          f"{config.level_dims[0]}")
    data_hash = hashlib.sha256(np.ascontiguousarray(emb).tobytes()).hexdigest()[:16]
    model = AnonymizerModel(config, metadata={
        "steps": config.steps, "seed": config.seed, "data_hash": data_hash})
    opt = AdamW(model.field.params,
                OneCycle(config.steps, config.peak_lr, config.pct_start),
                weight_decay=config.weight_decay)
    n = emb.shape[0]
    trace = []
    for step in range(config.steps):
        idx = rng.choice(n, size=min(config.batch, n), replace=n < config.batch)
        loss, grads = cfm_loss(model.field, emb[idx], None, rng)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}", step=step)
        opt.step(grads)
        trace.append({"step": step, "l_flow": loss, "lr": opt.lr})
    return model, trace


def encode(model: AnonymizerModel, s_orig, spec: IntegrationSpec) -> np.ndarray:
    """ODE-1: carry an embedding backward from t=1 to its Gaussian preimage."""
    if not (spec.t_start == 1.0 and spec.t_end == 0.0):
        raise InputError("encode integrates backward from t=1 to t=0")
    return integrate(model.field, np.asarray(s_orig, dtype=float), spec)


@dataclass(frozen=True)
class ObscurationInput:
    z_orig: np.ndarray
    z_rand: np.ndarray
    w: float

    def __post_init__(self):
        if not (-1.0 <= self.w <= 1.0):
            raise InputError(f"speaker weight must lie in [-1, 1], got {self.w}")


def obscure(inp: ObscurationInput) -> np.ndarray:
    """Variance-preserving blend of the encoded identity with fresh noise."""
    w = inp.w
    denom = np.sqrt((1.0 - w) ** 2 + w**2)
    return ((1.0 - w) * np.asarray(inp.z_rand) + w * np.asarray(inp.z_orig)) / denom


def generate(model: AnonymizerModel, z_anon, spec: IntegrationSpec) -> np.ndarray:
    """ODE-2: carry a Gaussian point forward to the embedding distribution."""
    if not (spec.t_start == 0.0 and spec.t_end == 1.0):
        raise InputError("generate integrates forward from t=0 to t=1")
    return integrate(model.field, np.asarray(z_anon, dtype=float), spec)


@dataclass(frozen=True)
class WeightStrategy:
    """Speaker-weight policy: fixed value, uniform range, or pool selection."""

    kind: str                      # "fixed" | "range" | "pool"
    w: float = 0.0                 # fixed value
    a: float = -1.0                # range bounds
    b: float = 1.0
    scope: str = "per_speaker"     # or "per_utterance"

    def __post_init__(self):
        if self.kind not in ("fixed", "range", "pool"):
            raise InputError(f"unknown strategy kind {self.kind!r}")
        if self.scope not in ("per_speaker", "per_utterance"):
            raise InputError(f"unknown scope {self.scope!r}")
        if self.kind == "fixed" and not (-1.0 <= self.w <= 1.0):
            raise InputError("fixed weight must lie in [-1, 1]")
        if self.kind == "range" and not (-1.0 <= self.a < self.b <= 1.0):
            raise InputError("range must satisfy -1 <= a < b <= 1")

    def draw_w(self, rng) -> float:
        if self.kind == "fixed":
            return self.w
        if self.kind == "range":
            return float(rng.uniform(self.a, self.b))
        raise InputError("pool strategy has no speaker weight")

    @classmethod
    def parse(cls, text: str, scope: str = "per_speaker") -> "WeightStrategy":
        """Parse 'fixed:W', 'range:A:B' or 'pool'."""
        parts = text.split(":")
        if parts[0] == "fixed" and len(parts) == 2:
            return cls(kind="fixed", w=float(parts[1]), scope=scope)
        if parts[0] == "range" and len(parts) == 3:
            return cls(kind="range", a=float(parts[1]), b=float(parts[2]), scope=scope)
        if parts[0] == "pool" and len(parts) == 1:
            return cls(kind="pool", scope=scope)
        raise ConfigError(f"cannot parse strategy {text!r}")


def anonymize_speaker(model, s_orig, strategy: WeightStrategy,
                      rng: np.random.Generator, spec: IntegrationSpec,
                      pool=None, speaker_id=None, memo=None):
    """Full encode-obscure-generate (or pool draw) for one speaker embedding.

    Returns (s_anon, w_used); w_used is None for the pool strategy.  With
    per_speaker scope and a ``memo`` dict, the first call per speaker id
    fixes the draw for all later calls.
    """
    key = speaker_id if (strategy.scope == "per_speaker" and memo is not None
                         and speaker_id is not None) else None
    if key is not None and key in memo:
        return memo[key]

    if strategy.kind == "pool":
        if pool is None or len(pool) == 0:
            raise InputError("pool strategy requires a non-empty embedding pool")
        s_anon = np.asarray(pool[int(rng.integers(len(pool)))], dtype=float).copy()
        result = (s_anon, None)
    else:
        w = strategy.draw_w(rng)
        back = IntegrationSpec(steps=spec.steps, t_start=1.0, t_end=0.0)
        fwd = IntegrationSpec(steps=spec.steps, t_start=0.0, t_end=1.0)
        z_orig = encode(model, s_orig, back)
        z_rand = rng.standard_normal(z_orig.shape[0])
        z_anon = obscure(ObscurationInput(z_orig=z_orig, z_rand=z_rand, w=w))
        result = (generate(model, z_anon, fwd), w)
    if key is not None:
        memo[key] = result
    return result


def anonymize_dataset(backbone: BackboneModel, anonymizer,
                      dataset: Dataset, strategy: WeightStrategy,
                      spec: IntegrationSpec, rng: np.random.Generator,
                      frame_spec: IntegrationSpec | None = None):
    """Regenerate every utterance's frames under a pseudo-speaker identity.

    Tokens, pitch, alignment and durations are preserved.  Returns
    (anonymized dataset, mapping) where mapping is
    {speaker_id: (w_used, s_anon)} for the attacker simulation.
    """
    frame_spec = frame_spec or IntegrationSpec(steps=16, t_start=0.0, t_end=1.0)
    memo = {}
    mapping = {}
    speaker_embs = {s.id: s.embedding for s in dataset.speakers}
    new_utts = []
    for u in dataset.utterances:
        if strategy.kind == "pool":
            pool = [e for sid, e in speaker_embs.items() if sid != u.speaker_id]
        else:
            pool = None
        try:
            s_anon, w_used = anonymize_speaker(
                anonymizer, speaker_embs[u.speaker_id], strategy, rng, spec,
                pool=pool, speaker_id=u.speaker_id, memo=memo)
            frames = reconstruct(backbone, u.frame_tokens, u.p_norm, s_anon,
                                 frame_spec, rng)
        except DivergenceError as e:
            raise DivergenceError(f"utterance {u.id}: {e}", step=e.step) from e
        mapping[u.speaker_id] = (w_used, s_anon)
        new_utts.append(Utterance(
            id=u.id, speaker_id=u.speaker_id, gender=u.gender,
            duration_s=u.duration_s, tokens=list(u.tokens),
            entity_spans=list(u.entity_spans), f0_hz=u.f0_hz.copy(),
            p_norm=u.p_norm.copy(), frames=frames,
            frames_per_token=u.frames_per_token))
    anon = Dataset(params=dataset.params, speakers=dataset.speakers,
                   utterances=new_utts, pool=dataset.pool)
    return anon, mapping


def save_mapping(mapping: dict, path) -> None:
    """TSV: speaker_id, w_used (NA for pool), comma-separated s_anon."""
    with open(path, "w") as f:
        for sid in sorted(mapping):
            w, s_anon = mapping[sid]
            wtxt = "NA" if w is None else f"{w:.9g}"
            stxt = ",".join(f"{v:.9g}" for v in np.asarray(s_anon))
            f.write(f"{sid}\t{wtxt}\t{stxt}\n")


def load_mapping(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        sid, wtxt, stxt = line.split("\t")
        w = None if wtxt == "NA" else float(wtxt)
        out[sid] = (w, np.array([float(v) for v in stxt.split(",")]))
    return out


def save_anonymizer(model: AnonymizerModel, path_prefix) -> None:
    prefix = Path(path_prefix)
    save_checkpoint(prefix.with_suffix(".ckpt"), model.tensors())
    meta = {"config": model.config.to_dict(), "metadata": model.metadata}
    prefix.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n")


def load_anonymizer(path_prefix) -> AnonymizerModel:
    prefix = Path(path_prefix)
    try:
        meta = json.loads(prefix.with_suffix(".json").read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"missing anonymizer metadata: {e}") from e
    model = AnonymizerModel(AnonymizerConfig.from_dict(meta["config"]),
                            metadata=meta.get("metadata", {}))
    model.load_tensors(load_checkpoint(prefix.with_suffix(".ckpt")))
    return model
