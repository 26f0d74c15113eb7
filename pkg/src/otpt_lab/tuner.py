"""Per-sample test-time prompt tuning.

Each test sample starts from the same base prompt, takes ``steps`` AdamW
updates on the objective of the configured method, and is then classified
with the tuned prompt on the clean (unaugmented) input.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import EmptyDataset, InvalidSpec
from .linalg import gram_matrix
from .model import ClassEmbeddings, EncoderParams, PromptState, class_logits, encode_image, encode_text, softmax
from .objective import METHODS, LossBreakdown, evaluate, view_features
from .optim import AdamWConfig, adamw_step

TUNER_METHODS = ("zeroshot",) + METHODS
LAMBDA_IN_DISTRIBUTION = 18.0
LAMBDA_SHIFT = 2.0


@dataclass(frozen=True)
class TunerConfig:
    method: str = "otpt"
    lambda_ortho: float = LAMBDA_IN_DISTRIBUTION
    lambda_atfd: float = 50.0
    rho: float = 0.1
    n_views: int = 64
    noise_sigma: float = 0.02
    mask_fraction: float = 0.1
    steps: int = 1
    adamw: AdamWConfig = field(default_factory=AdamWConfig)
    seed: int = 0

    def __post_init__(self):
        if self.method not in TUNER_METHODS:
            raise InvalidSpec(f"unknown method {self.method!r}; expected one of {TUNER_METHODS}")
        if self.n_views < 1:
            raise InvalidSpec("n_views must be >= 1")
        if not 0 < self.rho <= 1:
            raise InvalidSpec("rho must lie in (0, 1]")
        if not 0 <= self.mask_fraction < 1:
            raise InvalidSpec("mask_fraction must lie in [0, 1)")
        if self.steps < 0:
            raise InvalidSpec("steps must be >= 0")
        if self.lambda_ortho < 0 or self.lambda_atfd < 0:
            raise InvalidSpec("lambdas must be >= 0")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be >= 0")


@dataclass(frozen=True)
class PredictionRecord:
    probs: np.ndarray
    predicted: int
    confidence: float
    true_label: int
    mean_pairwise_cos: float
    loss_breakdown: LossBreakdown = LossBreakdown()
    logits: np.ndarray | None = None
    pairwise_cos: np.ndarray | None = None  # upper triangle of the tuned Gram matrix, row-major

    @property
    def correct(self) -> bool:
        return self.predicted == self.true_label


def record_from_logits(logits, true_label: int, mean_pairwise_cos: float = 0.0,
                       loss_breakdown: LossBreakdown = LossBreakdown(), pairwise_cos=None) -> PredictionRecord:
    logits = np.asarray(logits, dtype=np.float64)
    probs = softmax(logits)
    pred = int(np.argmax(probs))
    return PredictionRecord(probs, pred, float(probs[pred]), int(true_label), float(mean_pairwise_cos),
                            loss_breakdown, logits, pairwise_cos)


def derive_sample_seed(seed: int, x, label: int) -> int:
    """Per-sample augmentation seed keyed on the sample's content, not its position."""
    h = hashlib.blake2b(np.ascontiguousarray(x, dtype=np.float64).tobytes(), digest_size=8)
    h.update(int(label).to_bytes(8, "little", signed=True))
    h.update(int(seed).to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest()[:4], "little")


def augment_views(x, cfg: TunerConfig, sample_seed: int) -> np.ndarray:
    """View 0 is ``x``; the others get Gaussian jitter and random coordinate dropout."""
    x = np.asarray(x, dtype=np.float64)
    n, d = cfg.n_views, x.size
    views = np.repeat(x[None, :], n, axis=0)
    if n == 1:
        return views
    g = rng.stream(sample_seed, rng.TAG_AUGMENT)
    views[1:] += cfg.noise_sigma * g.standard_normal((n - 1, d))
    k = int(np.floor(cfg.mask_fraction * d))
    if k:
        drop = np.argsort(g.random((n - 1, d)), axis=1)[:, :k]
        np.put_along_axis(views[1:], drop, 0.0, axis=1)
    return views


def _upper(E: np.ndarray) -> np.ndarray:
    return gram_matrix(E)[np.triu_indices(E.shape[0], k=1)]


def tune_sample(params: EncoderParams, classes: ClassEmbeddings, base_prompt: PromptState, x, true_label: int,
                cfg: TunerConfig, sample_seed: int = 0) -> PredictionRecord:
    prompt = base_prompt.copy()
    breakdown = LossBreakdown()
    if cfg.method != "zeroshot":
        V = view_features(params, augment_views(x, cfg, sample_seed))
        for _ in range(cfg.steps):
            breakdown, grad, _ = evaluate(cfg.method, params, classes, prompt.context, V, cfg)
            prompt = adamw_step(prompt, grad, cfg.adamw)
    E = encode_text(params, classes, prompt)
    v = encode_image(params, x)
    cos = _upper(E)
    return record_from_logits(class_logits(E, v, params.logit_scale), true_label,
                              float(np.mean(cos)) if cos.size else 0.0, breakdown, cos)


def _samples(dataset):
    return list(getattr(dataset, "samples", dataset))


def run_dataset(params: EncoderParams, classes: ClassEmbeddings, base_prompt: PromptState, dataset,
                cfg: TunerConfig, workers: int = 1) -> list[PredictionRecord]:
    """Tune and classify every sample; record i depends only on sample i."""
    samples = _samples(dataset)
    if not samples:
        raise EmptyDataset("dataset has no samples")

    def one(i):
        x, label = samples[i]
        return tune_sample(params, classes, base_prompt, x, label, cfg, derive_sample_seed(cfg.seed, x, label))

    if workers <= 1:
        return [one(i) for i in range(len(samples))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(len(samples))))
