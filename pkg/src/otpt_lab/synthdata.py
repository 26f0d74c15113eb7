"""Deterministic synthetic classification data and its JSON file format.

Class prototypes live on the unit sphere of the image input space and are
pushed apart until their smallest pairwise angle reaches
``separation * pi / 2``.  Class-name tokens are fitted so that the text
tower, with an empty prompt, points each class at the image feature of its
prototype; this plays the role of contrastive pretraining.  The fitted tokens
are then shrunk by ``class_token_scale`` so that the learnable prompt carries
a comparable share of the pooled text input, as in CLIP where the context
words outnumber the class name.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import rng
from .errors import InvalidSpec, IoError, SchemaMismatch, SeparationInfeasible
from .linalg import l2_normalize_rows
from .model import ClassEmbeddings, EncoderParams, encode_images

FORMAT_VERSION = 1
REPULSION_ROUNDS = 500
REPULSION_STEP = 0.01
ALIGN_ROUNDS = 400
ALIGN_LR = 0.5


@dataclass(frozen=True)
class DatasetSpec:
    n_classes: int = 10
    d_img: int = 24
    d_tok: int = 16
    hidden: int = 32
    feat_dim: int = 16
    n_ctx: int = 4
    n_test: int = 500
    class_noise_sigma: float = 0.22
    separation: float = 0.5
    seed: int = 42
    class_token_scale: float = 0.0098

    def validate(self) -> None:
        if self.n_classes < 2:
            raise InvalidSpec("n_classes must be >= 2")
        if self.feat_dim < 2:
            raise InvalidSpec("feat_dim must be >= 2")
        if self.n_test < 1:
            raise InvalidSpec("n_test must be >= 1")
        for name in ("d_img", "d_tok", "hidden", "n_ctx"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{name} must be >= 1")
        if not 0.0 <= self.separation <= 1.0:
            raise InvalidSpec(f"separation must lie in [0, 1], got {self.separation}")
        if not (self.class_noise_sigma >= 0 and math.isfinite(self.class_noise_sigma)):
            raise InvalidSpec("class_noise_sigma must be finite and >= 0")
        if not (self.class_token_scale > 0 and math.isfinite(self.class_token_scale)):
            raise InvalidSpec("class_token_scale must be finite and > 0")


BENCHMARK_SPEC = DatasetSpec()


@dataclass(frozen=True)
class Dataset:
    spec: DatasetSpec
    encoder: EncoderParams
    classes: ClassEmbeddings
    prototypes: np.ndarray
    samples: list

    @property
    def X(self) -> np.ndarray:
        return np.stack([x for x, _ in self.samples])

    @property
    def labels(self) -> np.ndarray:
        return np.array([y for _, y in self.samples], dtype=np.int64)


def pairwise_angles(P: np.ndarray) -> np.ndarray:
    Pn = l2_normalize_rows(P)
    iu = np.triu_indices(P.shape[0], k=1)
    return np.arccos(np.clip((Pn @ Pn.T)[iu], -1.0, 1.0))


def repel_prototypes(P: np.ndarray, min_angle: float) -> np.ndarray:
    """Rotate the closest pair apart, one pair per round, until every angle >= min_angle."""
    P = l2_normalize_rows(P)
    C = P.shape[0]
    iu = np.triu_indices(C, k=1)
    for _ in range(REPULSION_ROUNDS + 1):
        cos = np.clip((P @ P.T)[iu], -1.0, 1.0)
        k = int(np.argmax(cos))
        theta = math.acos(cos[k])
        if theta >= min_angle - 1e-12:
            return P
        i, j = iu[0][k], iu[1][k]
        delta = min(REPULSION_STEP, (min_angle - theta) / 2.0)
        c = float(P[i] @ P[j])
        ti = c * P[i] - P[j]
        tj = c * P[j] - P[i]
        ni, nj = np.linalg.norm(ti), np.linalg.norm(tj)
        if ni == 0 or nj == 0:
            raise SeparationInfeasible("coincident prototypes cannot be separated")
        P[i] = math.cos(delta) * P[i] + math.sin(delta) * ti / ni
        P[j] = math.cos(delta) * P[j] + math.sin(delta) * tj / nj
        P[i] /= np.linalg.norm(P[i])
        P[j] /= np.linalg.norm(P[j])
    raise SeparationInfeasible(
        f"min angle {theta:.4f} short of {min_angle:.4f} after {REPULSION_ROUNDS} rounds")


def fit_class_tokens(encoder: EncoderParams, targets: np.ndarray, g0: np.ndarray, n_ctx: int) -> np.ndarray:
    """Gradient ascent on sum_c cos(text feature of class c, targets[c]) with an all-zero prompt."""
    g = g0.copy()
    scale = 1.0 / (n_ctx + 1)
    for _ in range(ALIGN_ROUNDS):
        h = np.tanh((g * scale) @ encoder.A_T.T)
        y = h @ encoder.W_T.T
        norms = np.linalg.norm(y, axis=1, keepdims=True)
        E = y / norms
        dE = targets
        dy = (dE - E * np.sum(dE * E, axis=1, keepdims=True)) / norms
        dg = ((dy @ encoder.W_T) * (1.0 - h * h)) @ encoder.A_T * scale
        g += ALIGN_LR * dg / max(np.linalg.norm(dg, axis=1).max(), 1e-12)
    return g


def draw_samples(spec: DatasetSpec, prototypes: np.ndarray, n: int, tag: int) -> list:
    C = spec.n_classes
    labels = np.arange(n) % C
    labels = labels[rng.stream(spec.seed, rng.TAG_SHUFFLE, tag).permutation(n)]
    noise = rng.stream(spec.seed, rng.TAG_SAMPLES, tag).standard_normal((n, spec.d_img))
    X = l2_normalize_rows(prototypes[labels] + spec.class_noise_sigma * noise)
    return [(X[i], int(labels[i])) for i in range(n)]


def generate_dataset(spec: DatasetSpec) -> Dataset:
    spec.validate()
    encoder = EncoderParams.generate(spec.seed, spec.d_tok, spec.d_img, spec.hidden, spec.feat_dim)
    P0 = rng.stream(spec.seed, rng.TAG_PROTOTYPES).standard_normal((spec.n_classes, spec.d_img))
    target = spec.separation * math.pi / 2
    prototypes = repel_prototypes(P0, target) if target > 0 else l2_normalize_rows(P0)
    g0 = rng.stream(spec.seed, rng.TAG_CLASSES).standard_normal((spec.n_classes, spec.d_tok))
    g = spec.class_token_scale * fit_class_tokens(encoder, encode_images(encoder, prototypes), g0, spec.n_ctx)
    samples = draw_samples(spec, prototypes, spec.n_test, 0)
    return Dataset(spec, encoder, ClassEmbeddings(g), prototypes, samples)


def validation_split(ds: Dataset, n: int) -> list:
    """Labeled samples from the same prototypes under an independent noise stream."""
    return draw_samples(ds.spec, ds.prototypes, n, rng.TAG_VALIDATION)


# ---------------------------------------------------------------------------
# file format


def _num(x: float) -> str:
    return format(float(x), ".17g")


def _arr(a) -> str:
    a = np.asarray(a)
    if a.ndim == 0:
        return _num(a)
    return "[" + ",".join(_arr(r) for r in a) + "]"


def dumps_dataset(ds: Dataset) -> str:
    enc = ds.encoder
    parts = [
        f'"version":{FORMAT_VERSION}',
        f'"spec":{json.dumps(asdict(ds.spec), sort_keys=True)}',
        '"encoder":{' + ",".join([
            f'"A_T":{_arr(enc.A_T)}', f'"W_T":{_arr(enc.W_T)}', f'"A_I":{_arr(enc.A_I)}',
            f'"W_I":{_arr(enc.W_I)}', f'"logit_scale":{_num(enc.logit_scale)}']) + "}",
        f'"classes":{_arr(ds.classes.g)}',
        f'"prototypes":{_arr(ds.prototypes)}',
        f'"samples":{{"x":{_arr(ds.X)},"labels":{json.dumps(ds.labels.tolist())}}}',
    ]
    return "{\n" + ",\n".join(parts) + "\n}\n"


def save_dataset(ds: Dataset, path) -> None:
    try:
        Path(path).write_text(dumps_dataset(ds), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _mat(obj, name) -> np.ndarray:
    a = np.array(obj, dtype=np.float64)
    if a.ndim != 2 or not np.all(np.isfinite(a)):
        raise SchemaMismatch(f"{name} must be a finite 2-D array")
    a.flags.writeable = False
    return a


def load_dataset(path) -> Dataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read dataset {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != FORMAT_VERSION:
        raise SchemaMismatch(f"unsupported dataset version {doc.get('version') if isinstance(doc, dict) else None!r}")
    try:
        known = {f.name for f in fields(DatasetSpec)}
        spec = DatasetSpec(**{k: v for k, v in doc["spec"].items() if k in known})
        e = doc["encoder"]
        encoder = EncoderParams(_mat(e["A_T"], "A_T"), _mat(e["W_T"], "W_T"), _mat(e["A_I"], "A_I"),
                                _mat(e["W_I"], "W_I"), float(e["logit_scale"]))
        classes = ClassEmbeddings(_mat(doc["classes"], "classes"))
        prototypes = _mat(doc["prototypes"], "prototypes")
        X = _mat(doc["samples"]["x"], "samples.x")
        labels = [int(v) for v in doc["samples"]["labels"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"malformed dataset file {path}: {exc}") from exc
    if len(labels) != X.shape[0] or any(not 0 <= y < spec.n_classes for y in labels):
        raise SchemaMismatch("sample labels inconsistent with spec")
    return Dataset(spec, encoder, classes, prototypes, [(X[i], labels[i]) for i in range(len(labels))])
