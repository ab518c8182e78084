"""Command line entry point: prepare, train, predict, evaluate, report.

Settings are resolved as defaults < ``--config`` file < ``INTIMACY_*``
environment variables < command line flags. Every command writes under
``--out`` (default ``runs``)::

    splits/{train,validation,test}.csv, splits/manifest.json
    checkpoints/<member id>/metadata.json, train_log.tsv
    predictions/<mode>.csv
    reports/<mode>.{json,csv,txt}, reports/kde_<mode>.csv
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import yaml

from . import __version__
from .augmentation import CachedTranslator, make_translator, predict_augmented
from .dataset import (
    SEEN_LANGUAGES,
    CorpusError,
    Source,
    filter_scored,
    load_corpus,
    load_split,
    make_splits,
    save_split,
)
from .ensemble import (
    DEFAULT_MULTILINGUAL_SCALE,
    DEFAULT_MULTILINGUAL_WEIGHTS,
    DEFAULT_SPECIALIST_WEIGHT,
    EnsembleConfig,
    MissingMemberError,
    predict_examples,
    read_predictions,
    write_predictions,
)
from .evaluation import (
    EvaluationReport,
    evaluate,
    kde_curve,
    plot_kde,
    render_comparison,
    render_report,
    write_kde_csv,
)
from .registry import Mode, RegistryError, load_registry
from .training import (
    StubBackend,
    TrainConfig,
    finetune,
    has_checkpoint,
    make_backend,
    save_checkpoint,
)

logger = logging.getLogger("intimacy")

ENV_PREFIX = "INTIMACY_"
MODES = [m.value for m in Mode]
# Validation share of the primary corpus used when no explicit count is given (1709 of 9491).
DEFAULT_VALIDATION_FRACTION = 1709 / 9491


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    primary: str | None = None
    auxiliary: str | None = None
    test: str | None = None
    registry: str | None = None
    out: str = "runs"
    seed: int = 13
    validation_count: int | None = None
    validation_fraction: float = DEFAULT_VALIDATION_FRACTION
    stratify: bool = False
    seen_languages: list[str] = field(default_factory=lambda: list(SEEN_LANGUAGES))
    mode: str = Mode.MULTILINGUAL.value
    multilingual_weights: list[float] = field(default_factory=lambda: list(DEFAULT_MULTILINGUAL_WEIGHTS))
    specialist_weight: float = DEFAULT_SPECIALIST_WEIGHT
    multilingual_scale: float = DEFAULT_MULTILINGUAL_SCALE
    augmented_seen_mode: str = Mode.MULTILINGUAL.value
    backend: str = "stub"
    learning_rate: float | None = None
    epochs: int = 3
    batch_size: int = 16
    max_sequence_length: int = 128
    translator: str = "identity"
    translator_url: str | None = None
    translator_dictionary: str | None = None
    translation_cache: str | None = None
    on_translation_error: str = "abort"
    workers: int = 1
    kde: bool = False
    plot: bool = False

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def ensemble_config(self, mode: str | None = None) -> EnsembleConfig:
        return EnsembleConfig(
            mode=Mode(mode or self.mode),
            multilingual_weights=tuple(self.multilingual_weights),
            specialist_weight=self.specialist_weight,
            multilingual_scale=self.multilingual_scale,
            augmented_seen_mode=Mode(self.augmented_seen_mode),
            seen_languages=tuple(self.seen_languages),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.epochs, self.batch_size, self.seed, self.max_sequence_length)

    def fingerprint(self, mode: str, registry) -> str:
        """Hash of everything that changes predictions; paths are excluded so runs compare across directories."""
        payload = {
            "mode": mode,
            "ensemble": asdict(self.ensemble_config(mode)),
            "seed": self.seed,
            "backend": self.backend,
            "translator": self.translator if mode == Mode.AUGMENTED.value else None,
            "registry": registry.to_dict(),
            "train": asdict(self.train_config()),
        }
        blob = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


_FIELDS = {f.name: f for f in fields(RunConfig)}


_FLOAT_FIELDS = {"learning_rate", "specialist_weight", "multilingual_scale", "validation_fraction"}


def _coerce(name: str, value):
    # YAML 1.1 reads "8e-6" as a string.
    if isinstance(value, str) and name in _FLOAT_FIELDS:
        return float(value)
    if isinstance(value, str) and name in ("multilingual_weights", "seen_languages"):
        value = [v.strip() for v in value.split(",") if v.strip()]
    if name == "multilingual_weights" and value is not None:
        value = [float(v) for v in value]
    return value


def build_config(config_path: str | None, overrides: dict, environ=None) -> RunConfig:
    values: dict = {}
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        values.update(loaded)
    environ = os.environ if environ is None else environ
    for name in _FIELDS:
        env_key = ENV_PREFIX + name.upper()
        if env_key in environ:
            values[name] = yaml.safe_load(environ[env_key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        values = {k: _coerce(k, v) for k, v in values.items()}
        cfg = RunConfig(**values)
        if cfg.mode not in MODES + ["all"]:
            raise ConfigError(f"mode must be one of {MODES + ['all']}")
        for mode in _modes(cfg):
            cfg.ensemble_config(mode)
        cfg.train_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def fixture_path(name: str) -> str:
    return str(resources.files("intimacy").joinpath(f"data/{name}"))


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise ConfigError(f"no {what} path configured")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _modes(cfg: RunConfig) -> list[str]:
    return MODES if cfg.mode == "all" else [cfg.mode]


def _backend(cfg: RunConfig):
    try:
        return make_backend(cfg.backend)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_prepare(cfg: RunConfig) -> Path:
    primary_path = _require(cfg.primary, "primary corpus")
    auxiliary_path = _require(cfg.auxiliary, "auxiliary corpus") if cfg.auxiliary else None
    test_path = _require(cfg.test, "test corpus")
    primary = load_corpus(primary_path, Source.PRIMARY)
    auxiliary = load_corpus(auxiliary_path, Source.AUXILIARY) if auxiliary_path else []
    test = load_corpus(test_path, Source.TEST)
    count = cfg.validation_count
    if count is None:
        count = int(round(len(primary) * cfg.validation_fraction))
    split = make_splits(primary, auxiliary, count, cfg.seed, test=test, stratify=cfg.stratify)
    manifest = save_split(split, cfg.out_dir / "splits")
    print(f"train={len(split.train)} validation={len(split.validation)} "
          f"test={len(split.test)} (annotated {len(filter_scored(split.test))}) -> {manifest}")
    return manifest


def _split(cfg: RunConfig):
    try:
        return load_split(cfg.out_dir / "splits")
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(cfg: RunConfig, force: bool = False, only: list[str] | None = None) -> list[Path]:
    split = _split(cfg)
    registry = load_registry(cfg.registry)
    backend = _backend(cfg)
    root = cfg.out_dir / "checkpoints"
    written = []
    for spec in registry.members:
        if only and spec.id not in only:
            continue
        if has_checkpoint(root, spec) and not force:
            logger.info("skipping %s: checkpoint exists (use --force to retrain)", spec.id)
            continue
        handle = finetune(spec, split.train, split.validation, cfg.train_config(), backend)
        written.append(save_checkpoint(handle, spec, cfg.train_config(), backend, root))
        print(f"{spec.id}: lr={handle.metrics.learning_rate:g} "
              f"train_mse={handle.metrics.final_train_mse:.4f} val_r={handle.metrics.best_validation_r}")
    return written


def _handles(cfg: RunConfig, registry, backend):
    root = cfg.out_dir / "checkpoints"
    handles = {}
    for spec in registry.members:
        if has_checkpoint(root, spec):
            handles[spec.id] = backend.load(spec, root / spec.id)
        elif isinstance(backend, StubBackend):
            handles[spec.id] = backend.handle_for(spec)
    return handles


def cmd_predict(cfg: RunConfig) -> list[Path]:
    split = _split(cfg)
    registry = load_registry(cfg.registry)
    backend = _backend(cfg)
    handles = _handles(cfg, registry, backend)
    written = []
    for mode in _modes(cfg):
        ens = cfg.ensemble_config(mode)
        if mode == Mode.AUGMENTED.value:
            translator = make_translator(
                cfg.translator, url=cfg.translator_url, dictionary=cfg.translator_dictionary,
                cache=cfg.translation_cache,
            )
            records = predict_augmented(split.test, registry, handles, ens, translator, backend,
                                        on_error=cfg.on_translation_error, max_workers=cfg.workers)
            if isinstance(translator, CachedTranslator):
                translator.save()
        else:
            records = predict_examples(split.test, ens, registry, handles, backend, max_workers=cfg.workers)
        path = cfg.out_dir / "predictions" / f"{mode}.csv"
        write_predictions(records, path)
        written.append(path)
        print(f"{mode}: {len(records)} predictions -> {path}")
    return written


def _gold(cfg: RunConfig, gold_path: str | None):
    if gold_path:
        return load_corpus(_require(gold_path, "gold file"), Source.TEST)
    return _split(cfg).test


def cmd_evaluate(cfg: RunConfig, gold_path: str | None = None) -> dict[str, EvaluationReport]:
    gold = _gold(cfg, gold_path)
    registry = load_registry(cfg.registry)
    reports_dir = cfg.out_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    reports = {}
    for mode in _modes(cfg):
        pred_path = cfg.out_dir / "predictions" / f"{mode}.csv"
        if not pred_path.is_file():
            raise ConfigError(f"no predictions for mode {mode!r} at {pred_path}; run predict first")
        records = read_predictions(pred_path)
        report = evaluate(records, gold, cfg.seen_languages, mode=mode, fingerprint=cfg.fingerprint(mode, registry))
        for fmt, ext in (("json", "json"), ("csv", "csv"), ("table", "txt")):
            (reports_dir / f"{mode}.{ext}").write_text(render_report(report, fmt), encoding="utf-8")
        if cfg.kde or cfg.plot:
            scored = {g.id for g in filter_scored(gold)}
            curve = kde_curve([r.combined for r in records if r.example_ref in scored])
            write_kde_csv({mode: curve}, reports_dir / f"kde_{mode}.csv")
            if cfg.plot:
                plot_kde({mode: curve}, reports_dir / f"kde_{mode}.png")
        reports[mode] = report
    print(render_comparison(reports), end="")
    return reports


def cmd_report(cfg: RunConfig, fmt: str = "table") -> str:
    reports_dir = cfg.out_dir / "reports"
    reports = {}
    for mode in _modes(cfg):
        path = reports_dir / f"{mode}.json"
        if path.is_file():
            reports[mode] = EvaluationReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    if not reports:
        raise ConfigError(f"no reports found under {reports_dir}; run evaluate first")
    if fmt == "table":
        text = render_comparison(reports)
    elif len(reports) == 1:
        text = render_report(next(iter(reports.values())), fmt)
    else:
        raise ConfigError(f"--format {fmt} needs a single --mode")
    print(text, end="")
    return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON run config")
    common.add_argument("--out", help="output directory (default: runs)")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=MODES + ["all"])
    common.add_argument("--backend", choices=["stub", "transformers"])
    common.add_argument("--registry", help="registry config (default: bundled)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="intimacy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="load corpora and write train/validation/test splits")
    p.add_argument("--primary")
    p.add_argument("--auxiliary")
    p.add_argument("--test")
    p.add_argument("--fixture", action="store_true", help="use the bundled 60-row fixture corpora")
    p.add_argument("--validation-count", dest="validation_count", type=int)
    p.add_argument("--stratify", action="store_true", default=None)

    p = sub.add_parser("train", parents=[common], help="fine-tune every registry member")
    p.add_argument("--force", action="store_true", help="retrain members that already have checkpoints")
    p.add_argument("--only", nargs="+", metavar="ID", help="train only these member ids")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, help="override every member's learning rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)

    p = sub.add_parser("predict", parents=[common], help="score the test split with the ensemble")
    p.add_argument("--translator", choices=["identity", "dictionary", "http"])
    p.add_argument("--translator-url", dest="translator_url")
    p.add_argument("--translator-dictionary", dest="translator_dictionary")
    p.add_argument("--translation-cache", dest="translation_cache")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("evaluate", parents=[common], help="Pearson r per language and pooled aggregates")
    p.add_argument("--gold", help="gold file (default: the prepared test split)")
    p.add_argument("--kde", action="store_true", default=None, help="also write KDE curves as csv")
    p.add_argument("--plot", action="store_true", default=None, help="also render KDE curves as png")

    p = sub.add_parser("report", parents=[common], help="print saved reports side by side")
    p.add_argument("--format", choices=["table", "json", "csv"], default="table")
    return parser


_NON_CONFIG = {"command", "config", "verbose", "force", "only", "fixture", "gold", "format"}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    try:
        if getattr(args, "fixture", False):
            for key, name in (("primary", "train.csv"), ("auxiliary", "questions.csv"), ("test", "test.csv")):
                overrides[key] = overrides.get(key) or fixture_path(name)
        cfg = build_config(args.config, overrides)
        if args.command == "prepare":
            cmd_prepare(cfg)
        elif args.command == "train":
            cmd_train(cfg, force=args.force, only=args.only)
        elif args.command == "predict":
            cmd_predict(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.gold)
        elif args.command == "report":
            cmd_report(cfg, args.format)
    except (ConfigError, RegistryError, CorpusError, FileNotFoundError, MissingMemberError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
