"""Fine-tuning registry members as scalar regressors.

Everything model-specific lives behind a backend. ``StubBackend`` needs no
downloads and is bit-exact deterministic, so the full pipeline can run in
tests; ``TransformersBackend`` fine-tunes a HuggingFace encoder with a
single linear regression output, MSE loss and Adam.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

from .dataset import LabeledExample
from .evaluation import UndefinedCorrelation, pearson_r
from .registry import ModelSpec

logger = logging.getLogger(__name__)

METADATA_FILE = "metadata.json"
LOG_FILE = "train_log.tsv"


@dataclass
class TrainConfig:
    # None means "take the member's default from the registry".
    learning_rate: float | None = None
    epochs: int = 3
    batch_size: int = 16
    seed: int = 13
    max_sequence_length: int = 128

    def __post_init__(self):
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        for name in ("epochs", "batch_size", "max_sequence_length"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")

    def for_spec(self, spec: ModelSpec) -> "TrainConfig":
        lr = self.learning_rate if self.learning_rate is not None else spec.learning_rate
        return TrainConfig(lr, self.epochs, self.batch_size, self.seed, self.max_sequence_length)


@dataclass
class TrainingMetrics:
    learning_rate: float | None = None
    epochs: int = 0
    final_train_mse: float | None = None
    best_validation_r: float | None = None
    best_epoch: int | None = None
    # One entry per epoch; epoch 0 is measured before any update.
    history: list[dict] = field(default_factory=list)


@dataclass
class RegressorHandle:
    spec_id: str
    token: Any = None
    metrics: TrainingMetrics = field(default_factory=TrainingMetrics)


class BackendError(RuntimeError):
    pass


class PredictorBackend(Protocol):
    name: str

    def finetune(self, spec: ModelSpec, train: Sequence[LabeledExample],
                 validation: Sequence[LabeledExample], config: TrainConfig) -> RegressorHandle: ...

    def predict(self, handle: RegressorHandle, texts: Sequence[str]) -> list[float]: ...

    def save(self, handle: RegressorHandle, directory: Path) -> None: ...

    def load(self, spec: ModelSpec, directory: Path) -> RegressorHandle: ...


def _mse(pred: Sequence[float], gold: Sequence[float]) -> float:
    return math.fsum((p - g) ** 2 for p, g in zip(pred, gold)) / len(gold)


def _safe_r(pred: Sequence[float], gold: Sequence[float]) -> float | None:
    try:
        return pearson_r(pred, gold)
    except UndefinedCorrelation:
        return None


class StubBackend:
    """Untrainable predictor: a keyed hash of the text mapped into [1, 5].

    The spec id is part of the hash key, so different members disagree with
    each other while each stays a pure function of the text. ``constant``
    replaces the hash with a fixed value.
    """

    name = "stub"

    def __init__(self, constant: float | None = None):
        self.constant = constant

    def handle_for(self, spec: ModelSpec) -> RegressorHandle:
        return RegressorHandle(spec.id, token=spec.id)

    def _score(self, key: str, text: str) -> float:
        if self.constant is not None:
            return float(self.constant)
        digest = hashlib.blake2b(f"{key}\x1f{text}".encode("utf-8"), digest_size=8).digest()
        return 1.0 + 4.0 * int.from_bytes(digest, "big") / 2.0**64

    def predict(self, handle, texts):
        return [self._score(handle.token, t) for t in texts]

    def finetune(self, spec, train, validation, config):
        handle = self.handle_for(spec)
        train_mse = _mse(self.predict(handle, [e.text for e in train]), [e.score for e in train])
        val_r = None
        if validation:
            val_r = _safe_r(self.predict(handle, [e.text for e in validation]), [e.score for e in validation])
        handle.metrics = TrainingMetrics(
            learning_rate=config.learning_rate,
            epochs=0,
            final_train_mse=train_mse,
            best_validation_r=val_r,
            best_epoch=0,
            history=[{"epoch": 0, "train_mse": train_mse, "validation_r": val_r}],
        )
        return handle

    def save(self, handle, directory):
        pass

    def load(self, spec, directory):
        return self.handle_for(spec)


class TransformersBackend:
    """HuggingFace sequence-regression fine-tuning on CPU or GPU.

    ``artifact_id`` may be a hub model name or a local directory. The
    pretrained head is discarded in favour of a fresh single-output linear
    layer; outputs are never clamped.
    """

    name = "transformers"

    def __init__(self, device: str | None = None, predict_batch_size: int = 64):
        try:
            import torch  # noqa: F401
            import transformers  # noqa: F401
        except ImportError as exc:
            raise BackendError("the transformers backend needs torch and transformers installed") from exc
        import torch

        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        self.predict_batch_size = predict_batch_size

    def _build(self, source: str):
        from transformers import AutoModelForSequenceClassification, AutoTokenizer

        try:
            tokenizer = AutoTokenizer.from_pretrained(source)
            model = AutoModelForSequenceClassification.from_pretrained(
                source, num_labels=1, problem_type="regression", ignore_mismatched_sizes=True
            )
        except (OSError, ValueError) as exc:
            raise BackendError(f"could not load model {source!r}: {exc}") from exc
        return model.to(self.device), tokenizer

    def _forward(self, model, tokenizer, texts, max_length):
        enc = tokenizer(list(texts), padding=True, truncation=True, max_length=max_length, return_tensors="pt")
        enc = {k: v.to(self.device) for k, v in enc.items()}
        return model(**enc).logits.squeeze(-1)

    def _predict(self, model, tokenizer, texts, max_length) -> list[float]:
        import torch

        model.eval()
        out: list[float] = []
        with torch.no_grad():
            for i in range(0, len(texts), self.predict_batch_size):
                out.extend(self._forward(model, tokenizer, texts[i:i + self.predict_batch_size], max_length).float().cpu().tolist())
        return out

    def finetune(self, spec, train, validation, config):
        import numpy as np
        import torch

        random.seed(config.seed)
        np.random.seed(config.seed % 2**32)
        torch.manual_seed(config.seed)
        model, tokenizer = self._build(spec.artifact_id)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        loss_fn = torch.nn.MSELoss()

        train_texts = [e.text for e in train]
        train_gold = [e.score for e in train]
        val_texts = [e.text for e in validation]
        val_gold = [e.score for e in validation]
        max_len = config.max_sequence_length

        def measure(epoch):
            row = {
                "epoch": epoch,
                "train_mse": _mse(self._predict(model, tokenizer, train_texts, max_len), train_gold),
                "validation_r": _safe_r(self._predict(model, tokenizer, val_texts, max_len), val_gold) if val_texts else None,
            }
            logger.info("%s epoch %d train_mse=%.6f validation_r=%s", spec.id, epoch, row["train_mse"], row["validation_r"])
            return row

        history = [measure(0)]
        best_r, best_epoch, best_state = None, None, None
        generator = torch.Generator().manual_seed(config.seed)
        for epoch in range(1, config.epochs + 1):
            model.train()
            order = torch.randperm(len(train), generator=generator).tolist()
            for i in range(0, len(order), config.batch_size):
                idx = order[i:i + config.batch_size]
                preds = self._forward(model, tokenizer, [train_texts[j] for j in idx], max_len)
                target = torch.tensor([train_gold[j] for j in idx], dtype=preds.dtype, device=self.device)
                loss = loss_fn(preds, target)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            row = measure(epoch)
            history.append(row)
            r = row["validation_r"]
            if r is not None and (best_r is None or r > best_r):
                best_r, best_epoch = r, epoch
                best_state = copy.deepcopy({k: v.detach().cpu() for k, v in model.state_dict().items()})

        final = history[-1]
        if best_state is not None and best_epoch != config.epochs:
            model.load_state_dict(best_state)
            final = history[best_epoch]
        metrics = TrainingMetrics(
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            final_train_mse=final["train_mse"],
            best_validation_r=best_r,
            best_epoch=best_epoch if best_epoch is not None else config.epochs,
            history=history,
        )
        return RegressorHandle(spec.id, token=(model, tokenizer, max_len), metrics=metrics)

    def predict(self, handle, texts):
        model, tokenizer, max_len = handle.token
        return self._predict(model, tokenizer, list(texts), max_len)

    def save(self, handle, directory):
        model, tokenizer, _ = handle.token
        model.save_pretrained(directory / "model")
        tokenizer.save_pretrained(directory / "model")

    def load(self, spec, directory):
        model_dir = directory / "model"
        if not model_dir.is_dir():
            raise BackendError(f"no model weights under {directory}")
        meta = read_metadata(directory)
        model, tokenizer = self._build(str(model_dir))
        max_len = meta.get("config", {}).get("max_sequence_length", 128)
        return RegressorHandle(spec.id, token=(model, tokenizer, max_len), metrics=TrainingMetrics(**meta.get("metrics", {})))


def make_backend(name: str, **kwargs) -> PredictorBackend:
    if name == "stub":
        return StubBackend(**kwargs)
    if name in ("transformers", "real"):
        return TransformersBackend(**kwargs)
    raise ValueError(f"unknown backend {name!r}")


def finetune(
    spec: ModelSpec,
    train: Sequence[LabeledExample],
    validation: Sequence[LabeledExample],
    config: TrainConfig,
    backend: PredictorBackend,
) -> RegressorHandle:
    if not train:
        raise ValueError(f"{spec.id}: empty training data")
    unscored = [e.id for e in list(train) + list(validation) if e.score is None]
    if unscored:
        raise ValueError(f"{spec.id}: unannotated examples in training data: {unscored[:3]}")
    config = config.for_spec(spec)
    logger.info("fine-tuning %s (%s) lr=%g on %d examples", spec.id, spec.artifact_id, config.learning_rate, len(train))
    try:
        return backend.finetune(spec, train, validation, config)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"{spec.id}: backend failure: {exc}") from exc


def predict_batch(handle: RegressorHandle, texts: Sequence[str], backend: PredictorBackend) -> list[float]:
    if not texts:
        return []
    out = backend.predict(handle, list(texts))
    if len(out) != len(texts):
        raise BackendError(f"{handle.spec_id}: backend returned {len(out)} scores for {len(texts)} texts")
    return out


def save_checkpoint(handle: RegressorHandle, spec: ModelSpec, config: TrainConfig,
                    backend: PredictorBackend, root: str | Path) -> Path:
    """Write ``<root>/<spec_id>/`` with backend artifacts, metadata and the epoch log."""
    directory = Path(root) / spec.id
    directory.mkdir(parents=True, exist_ok=True)
    backend.save(handle, directory)
    meta = {
        "spec": spec.to_dict(),
        "backend": backend.name,
        "config": asdict(config.for_spec(spec)),
        "metrics": asdict(handle.metrics),
    }
    (directory / METADATA_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with (directory / LOG_FILE).open("w", encoding="utf-8") as fh:
        fh.write("epoch\ttrain_mse\tvalidation_r\n")
        for row in handle.metrics.history:
            r = row["validation_r"]
            fh.write(f"{row['epoch']}\t{row['train_mse']!r}\t{'' if r is None else repr(r)}\n")
    return directory


def read_metadata(directory: str | Path) -> dict:
    path = Path(directory) / METADATA_FILE
    return json.loads(path.read_text(encoding="utf-8"))


def has_checkpoint(root: str | Path, spec: ModelSpec) -> bool:
    return (Path(root) / spec.id / METADATA_FILE).is_file()
