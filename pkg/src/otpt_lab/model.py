"""Frozen toy dual encoder and the learnable prompt.

Both towers are ``x -> normalize(W @ tanh(A @ x))``.  The text tower reads
the mean of the prompt's context vectors and one class-name token.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .errors import DimensionMismatch
from .linalg import l2_normalize, l2_normalize_rows

LOGIT_SCALE = 100.0


@dataclass(frozen=True)
class EncoderParams:
    A_T: np.ndarray  # H x d_tok
    W_T: np.ndarray  # D x H
    A_I: np.ndarray  # H x d_img
    W_I: np.ndarray  # D x H
    logit_scale: float = LOGIT_SCALE

    @property
    def d_tok(self) -> int:
        return self.A_T.shape[1]

    @property
    def d_img(self) -> int:
        return self.A_I.shape[1]

    @property
    def feat_dim(self) -> int:
        return self.W_T.shape[0]

    @classmethod
    def generate(cls, seed: int, d_tok: int = 16, d_img: int = 24, hidden: int = 32,
                 feat_dim: int = 16, logit_scale: float = LOGIT_SCALE) -> "EncoderParams":
        g = rng.stream(seed, rng.TAG_ENCODER)

        def init(rows, cols):
            return g.uniform(-1.0, 1.0, size=(rows, cols)) / np.sqrt(cols)

        A_T = init(hidden, d_tok)
        W_T = init(feat_dim, hidden)
        A_I = init(hidden, d_img)
        W_I = init(feat_dim, hidden)
        for a in (A_T, W_T, A_I, W_I):
            a.flags.writeable = False
        return cls(A_T, W_T, A_I, W_I, float(logit_scale))


@dataclass(frozen=True)
class ClassEmbeddings:
    g: np.ndarray  # C x d_tok

    @property
    def n_classes(self) -> int:
        return self.g.shape[0]


@dataclass
class PromptState:
    context: np.ndarray  # P x d_tok
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    step_count: int = 0

    def __post_init__(self):
        self.context = np.array(self.context, dtype=np.float64)
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.context)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.context)

    def copy(self) -> "PromptState":
        return replace(self, context=self.context.copy(), adam_m=self.adam_m.copy(),
                       adam_v=self.adam_v.copy())


PROMPT_SCALE = 0.031


def init_prompt(seed: int, n_ctx: int = 4, d_tok: int = 16, scale: float = PROMPT_SCALE) -> PromptState:
    """Seeded stand-in for a hand-written prompt such as "a photo of a"."""
    g = rng.stream(seed, rng.TAG_PROMPT)
    return PromptState(scale * g.standard_normal((n_ctx, d_tok)))


@dataclass
class TextForward:
    """Intermediates of the text tower, kept for backpropagation."""

    u: np.ndarray
    h: np.ndarray
    y: np.ndarray
    E: np.ndarray
    extras: dict = field(default_factory=dict)


def pool_tokens(context: np.ndarray, g: np.ndarray) -> np.ndarray:
    P = context.shape[0]
    return (context.sum(axis=0)[None, :] + g) / (P + 1)


def text_forward(params: EncoderParams, classes: ClassEmbeddings, context: np.ndarray) -> TextForward:
    if context.shape[1] != params.d_tok or classes.g.shape[1] != params.d_tok:
        raise DimensionMismatch("token dimension disagrees with the text encoder")
    u = pool_tokens(context, classes.g)
    h = np.tanh(u @ params.A_T.T)
    y = h @ params.W_T.T
    return TextForward(u, h, y, l2_normalize_rows(y))


def encode_text(params: EncoderParams, classes: ClassEmbeddings, prompt: PromptState) -> np.ndarray:
    """Row-normalized class text features, C x D."""
    return text_forward(params, classes, prompt.context).E


def encode_image(params: EncoderParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.d_img:
        raise DimensionMismatch(f"image vector length {x.shape[-1]} != {params.d_img}")
    return l2_normalize(params.W_I @ np.tanh(params.A_I @ x))


def encode_images(params: EncoderParams, X) -> np.ndarray:
    """Batch form of :func:`encode_image`; one row per input."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != params.d_img:
        raise DimensionMismatch(f"image vector length {X.shape[-1]} != {params.d_img}")
    return l2_normalize_rows(np.tanh(X @ params.A_I.T) @ params.W_I.T)


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def class_logits(E: np.ndarray, v: np.ndarray, logit_scale: float) -> np.ndarray:
    return logit_scale * (E @ v)


def predict(E: np.ndarray, v: np.ndarray, logit_scale: float) -> np.ndarray:
    return softmax(class_logits(E, v, logit_scale))
