"""Command-line driver: prepare -> train -> evaluate, plus score/export helpers.

Settings come from dataclass defaults, then an optional ``key=value`` config
file, then command-line flags.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import detect
from .dataset import (ATTACK_CATEGORIES, AttackTaxonomy, Category, DatasetError, load_split,
                      read_records, training_bucket)
from .ebgan import Discriminator, NumericalError, TrainConfig, train
from .neural import mlp_from_bytes, mlp_to_bytes
from .preprocess import (REFERENCE_ENCODED_DIM, EncodingError, EncodingModel, build_mask, encode_many,
                         fit_encoding)

log = logging.getLogger("ids_ebgan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ENCODING_FILE = "encoding.txt"
SUMMARY_FILE = "prepare_summary.txt"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train_path: str = ""
    test_path: str = ""
    taxonomy_path: str = ""  # empty: bundled NSL-KDD mapping
    output_dir: str = "runs"
    attack_category: str = "DoS"
    m: float = 1.0
    lambda_pt: float = 0.1
    learning_rate: float = 2e-4
    batch_size: int = 64
    epochs: int = 20
    latent_dim: int = 100
    code_dim: int = 100
    sn_enabled: bool = True
    noise_only_generator: bool = False
    criteria: tuple = ("mse",)
    threshold_modes: tuple = ("ratio",)
    ratio: float = 44.0
    seeds: tuple = (0,)
    bins: int = 50
    restrict_test: bool = False
    jobs: int = 1

    def validate(self) -> "RunConfig":
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if not 0 <= self.ratio <= 100:
            raise ConfigError("ratio must lie in [0, 100]")
        if not self.output_dir:
            raise ConfigError("output_dir must not be empty")
        for c in self.criteria:
            if c not in detect.CRITERIA:
                raise ConfigError(f"unknown criterion {c!r}")
        for mode in self.threshold_modes:
            if mode not in ("ratio", "max-train"):
                raise ConfigError(f"unknown threshold mode {mode!r}")
        try:
            category = Category.parse(self.attack_category)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not category.is_attack:
            raise ConfigError("attack_category must be an attack class")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        try:
            self.train_config(self.seeds[0])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    @property
    def category(self) -> Category:
        c = Category.parse(self.attack_category)
        return Category.U2R_R2L if c in (Category.U2R, Category.R2L) else c

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def seed_dir(self, seed: int) -> Path:
        return self.out / f"seed_{seed}"

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            m=self.m, lambda_pt=self.lambda_pt, learning_rate=self.learning_rate,
            batch_size=self.batch_size, epochs=self.epochs, latent_dim=self.latent_dim,
            code_dim=self.code_dim, seed=seed, attack_category=self.category.value,
            sn_enabled=self.sn_enabled, noise_only_generator=self.noise_only_generator,
        )

    def taxonomy(self) -> AttackTaxonomy:
        if self.taxonomy_path:
            return AttackTaxonomy.from_file(self.taxonomy_path)
        return AttackTaxonomy.default()


def _coerce(field_type, text: str):
    text = text.strip()
    if field_type in ("bool", bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if field_type in ("int", int):
        return int(text)
    if field_type in ("float", float):
        return float(text)
    if field_type in ("tuple", tuple):
        return tuple(p.strip() for p in text.split(",") if p.strip())
    return text


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_INT_TUPLES = {"seeds"}


def _set(values: dict, key: str, raw: str) -> None:
    key = key.strip().replace("-", "_")
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        value = _coerce(_FIELD_TYPES[key], raw)
        if key in _INT_TUPLES:
            value = tuple(int(v) for v in value)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    values[key] = value


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        _set(values, key, raw)
    return values


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            name = "--sn" if f.name == "sn_enabled" else flag
            p.add_argument(name, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            p.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ids-ebgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (
        ("prepare", "fit the encoding on the training file and summarise it"),
        ("train", "train one generator/discriminator pair per seed"),
        ("evaluate", "score the test file, threshold, and report P/R/F1 per seed and on average"),
        ("score", "write anomaly scores for the test file"),
        ("export-hist", "write min-max normalised score histograms"),
        ("export-recon", "write reconstructed test vectors with their labels"),
    ):
        _add_run_flags(sub.add_parser(name, help=help_))
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        values.update(parse_config_text(text))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        if isinstance(v, bool):
            values[f.name] = v
        else:
            _set(values, f.name, v)
    return RunConfig(**values).validate()


# helpers ---------------------------------------------------------------------

def _require(path: str, what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} is not set")
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _load_encoding(cfg: RunConfig) -> EncodingModel:
    path = cfg.out / ENCODING_FILE
    if not path.is_file():
        raise FileNotFoundError(f"encoding artifact missing: {path} (run `prepare` first)")
    return EncodingModel.load(path)


def _test_set(cfg: RunConfig, model: EncodingModel):
    rows = read_records(_require(cfg.test_path, "test_path"), cfg.taxonomy())
    if cfg.restrict_test:
        keep = {Category.NORMAL, cfg.category}
        if cfg.category is Category.U2R_R2L:
            keep |= {Category.U2R, Category.R2L}
        rows = [r for r in rows if r[1] in keep]
    if not rows:
        raise DatasetError("test set is empty")
    x = encode_many([r for r, _ in rows], model)
    y = np.array([c is not Category.NORMAL for _, c in rows])
    return x, y


def _load_disc(cfg: RunConfig, seed: int) -> Discriminator:
    d = cfg.seed_dir(seed)
    paths = [d / "discriminator_encoder.ckpt", d / "discriminator_decoder.ckpt"]
    for p in paths:
        if not p.is_file():
            raise FileNotFoundError(f"missing checkpoint {p} (run `train` for seed {seed})")
    enc, dec = (mlp_from_bytes(p.read_bytes()) for p in paths)
    return Discriminator(enc, dec)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# commands --------------------------------------------------------------------

def cmd_prepare(cfg: RunConfig) -> int:
    taxonomy = cfg.taxonomy()
    rows = read_records(_require(cfg.train_path, "train_path"), taxonomy)
    if not rows:
        raise DatasetError("training file has no records")
    model = fit_encoding([r for r, _ in rows])
    cfg.out.mkdir(parents=True, exist_ok=True)
    model.save(cfg.out / ENCODING_FILE)

    counts = {c: 0 for c in (Category.NORMAL, *ATTACK_CATEGORIES)}
    for _, c in rows:
        counts[c] += 1
    lines = [f"records\t{len(rows)}"]
    lines += [f"count\t{c.value}\t{n}" for c, n in counts.items()]
    lines.append(f"count\t{Category.U2R_R2L.value}\t{counts[Category.U2R] + counts[Category.R2L]}")
    lines.append(f"encoded_dim\t{model.encoded_dim}")
    for idx, vocab in sorted(model.vocabularies.items()):
        lines.append(f"vocabulary_size\t{idx}\t{len(vocab)}")
    text = "\n".join(lines) + "\n"
    _write(cfg.out / SUMMARY_FILE, text)
    print(text, end="")
    if model.encoded_dim != REFERENCE_ENCODED_DIM:
        log.warning("encoded dimension is %d, not the %d reported for the reference setup",
                    model.encoded_dim, REFERENCE_ENCODED_DIM)
    return EXIT_OK


def _train_one(cfg: RunConfig, seed: int, x_normal, x_mal, mask, encoding_digest: str):
    tc = cfg.train_config(seed)
    res = train(tc, x_normal, x_mal, mask)
    d = cfg.seed_dir(seed)
    d.mkdir(parents=True, exist_ok=True)
    (d / "generator.ckpt").write_bytes(mlp_to_bytes(res.generator.net))
    (d / "discriminator_encoder.ckpt").write_bytes(mlp_to_bytes(res.discriminator.encoder))
    (d / "discriminator_decoder.ckpt").write_bytes(mlp_to_bytes(res.discriminator.decoder))
    _write(d / "train_config.txt",
           tc.to_text() + f"encoding={ENCODING_FILE}\nencoding_sha256={encoding_digest}\n")
    lines = ["epoch,batch,d_loss,g_loss"]
    lines += [f"{e},{b},{dl!r},{gl!r}" for e, b, dl, gl in res.log]
    _write(d / "losses.csv", "\n".join(lines) + "\n")
    final = res.log[-1] if res.log else None
    return seed, final


def cmd_train(cfg: RunConfig) -> int:
    model = _load_encoding(cfg)
    digest = hashlib.sha256((cfg.out / ENCODING_FILE).read_bytes()).hexdigest()
    part = load_split(_require(cfg.train_path, "train_path"), cfg.taxonomy())
    bucket = training_bucket(part, cfg.category)
    if not part.normal or not bucket:
        raise DatasetError(f"need both normal and {cfg.category.value} records to train "
                           f"(got {len(part.normal)} / {len(bucket)})")
    x_normal = encode_many(part.normal, model)
    x_mal = encode_many(bucket, model)
    mask = None if cfg.noise_only_generator else build_mask(cfg.category, model)
    log.info("training on %d normal and %d %s records, d=%d", len(x_normal), len(x_mal),
             cfg.category.value, model.encoded_dim)
    jobs = [(cfg, s, x_normal, x_mal, mask, digest) for s in cfg.seeds]
    if cfg.jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_train_one, *zip(*jobs)))
    else:
        results = [_train_one(*j) for j in jobs]
    for seed, final in results:
        if final is None:
            print(f"seed {seed}: no training steps")
        else:
            print(f"seed {seed}: final d_loss={final[2]:.6f} g_loss={final[3]:.6f}")
    return EXIT_OK


def _train_normal(cfg: RunConfig, model: EncodingModel):
    part = load_split(_require(cfg.train_path, "train_path"), cfg.taxonomy())
    return encode_many(part.normal, model)


def cmd_evaluate(cfg: RunConfig) -> int:
    model = _load_encoding(cfg)
    x, y = _test_set(cfg, model)
    x_train = _train_normal(cfg, model) if "max-train" in cfg.threshold_modes else None
    discs = {s: _load_disc(cfg, s) for s in cfg.seeds}
    per_key = {}
    for seed in cfg.seeds:
        disc, d = discs[seed], cfg.seed_dir(seed)
        reports = []
        for criterion in cfg.criteria:
            s = detect.score(disc, x, criterion)
            for mode in cfg.threshold_modes:
                if mode == "ratio":
                    thr, pred = detect.threshold_by_ratio(s, cfg.ratio)
                    mode_name = f"ratio({cfg.ratio:g}%)"
                else:
                    thr, pred = detect.threshold_by_max_train(detect.score(disc, x_train, criterion), s)
                    mode_name = "max-train"
                rep = detect.evaluate(y, pred, thr, criterion, mode_name)
                reports.append(rep)
                per_key.setdefault((criterion, mode_name), []).append(rep)
                detect.export_scores(s, y, pred, out=d / f"scores_{criterion}_{mode}.csv")
            detect.export_histogram(detect.normalize_scores(s), y, cfg.bins,
                                    out=d / f"histogram_{criterion}.csv")
        detect.export_reports(reports, out=d / "report.csv")
        if seed == cfg.seeds[0]:
            detect.export_reconstructions(disc, x, y, out=d / "reconstructions.csv")

    lines = ["criterion,mode,n_seeds,precision,recall,f1"]
    human = [f"test records: {len(y)} ({int(y.sum())} malicious), seeds: {list(cfg.seeds)}"]
    for (criterion, mode), reps in per_key.items():
        for rep, seed in zip(reps, cfg.seeds):
            human.append(f"  seed {seed}: {rep.summary()}")
        p = float(np.mean([r.precision for r in reps]))
        r = float(np.mean([r.recall for r in reps]))
        f = float(np.mean([r.f1 for r in reps]))
        lines.append(f"{criterion},{mode},{len(reps)},{p!r},{r!r},{f!r}")
        human.append(f"mean {criterion}/{mode}: P={p:.4f} R={r:.4f} F1={f:.4f}")
    _write(cfg.out / "report_mean.csv", "\n".join(lines) + "\n")
    _write(cfg.out / "report.txt", "\n".join(human) + "\n")
    print("\n".join(human))
    return EXIT_OK


def cmd_score(cfg: RunConfig) -> int:
    model = _load_encoding(cfg)
    x, y = _test_set(cfg, model)
    for seed in cfg.seeds:
        disc = _load_disc(cfg, seed)
        for criterion in cfg.criteria:
            path = cfg.seed_dir(seed) / f"scores_{criterion}.csv"
            detect.export_scores(detect.score(disc, x, criterion), y, out=path)
            print(path)
    return EXIT_OK


def cmd_export_hist(cfg: RunConfig) -> int:
    model = _load_encoding(cfg)
    x, y = _test_set(cfg, model)
    for seed in cfg.seeds:
        disc = _load_disc(cfg, seed)
        for criterion in cfg.criteria:
            path = cfg.seed_dir(seed) / f"histogram_{criterion}.csv"
            s = detect.normalize_scores(detect.score(disc, x, criterion))
            detect.export_histogram(s, y, cfg.bins, out=path)
            print(path)
    return EXIT_OK


def cmd_export_recon(cfg: RunConfig) -> int:
    model = _load_encoding(cfg)
    x, y = _test_set(cfg, model)
    for seed in cfg.seeds:
        path = cfg.seed_dir(seed) / "reconstructions.csv"
        detect.export_reconstructions(_load_disc(cfg, seed), x, y, out=path)
        print(path)
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "score": cmd_score,
    "export-hist": cmd_export_hist,
    "export-recon": cmd_export_recon,
}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (DatasetError, EncodingError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
