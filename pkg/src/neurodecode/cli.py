"""Command-line interface.

Subcommands: synth, preprocess, pretrain, align, eval, analyze, sweep.
Every command reads one JSON config file (strict: unknown keys are rejected),
writes its artifacts under --out, and finishes by atomically writing a
run_manifest.json describing what ran. Exit codes: 0 success, 1 runtime
failure, 2 usage or config validation error.
"""

from __future__ import annotations

import argparse
import datetime
import glob
import json
import logging
import os
import shutil
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import (
    TrimodalAligner,
    ensemble_predict,
    load_alignment_checkpoint,
    save_alignment_checkpoint,
    save_alignment_history,
)
from .analyses import (
    AnalysisPipeline,
    BandSpec,
    WindowSpec,
    region_map_from_names,
    spatial_region_analysis,
    spectral_band_analysis,
    temporal_window_analysis,
)
from .config import ConfigError, dataclass_from_dict, load_json_config, reject_unknown_keys
from .containers import ContainerFormatError, manifest_path
from .encoder import (
    EncoderConfig,
    TsConvConfig,
    load_encoder_checkpoint,
    read_coord_csv,
    save_encoder_checkpoint,
)
from .evaluation import concept_mean_embeddings, rsa_matrix, zero_shot_retrieval
from .features import cache_dir, load_bank, save_bank
from .pretrain import MaskedReconstructionPretrainer, save_loss_history
from .splits import ensure_split
from .stats import wilcoxon_holm
from .synthetic import SyntheticSpec, generate_synthetic
from .trials import average_repetitions, load_trials, read_raw_dataset, save_trials
from .validation import check_trials

logger = logging.getLogger("neurodecode")

DEFAULT_SEEDS = (0, 1, 2)


# --- config sections -------------------------------------------------------

@dataclass
class EncoderSection:
    """Encoder hyperparameters; data-dependent shape fields come from trials."""

    embedding_dim: int | None = None
    gat_heads: int = 1
    gat_leaky_slope: float = 0.2
    transformer_layers: int = 1
    transformer_model_dim: int = 250
    transformer_heads: int = 5
    gate_hidden: int | None = None
    coord_csv: str | None = None
    tsconv: dict | None = None
    subject_init_noise: float = 1e-3
    shared_subject_map: bool = False

    def build(self, trials, default_dim: int) -> EncoderConfig:
        if self.tsconv is not None:
            tsconv = dataclass_from_dict(TsConvConfig, self.tsconv, "encoder.tsconv")
        else:
            tsconv = TsConvConfig.for_time_samples(trials.n_samples)
        coord_table = read_coord_csv(self.coord_csv) if self.coord_csv else None
        return EncoderConfig(
            channels=trials.n_channels,
            time_samples=trials.n_samples,
            embedding_dim=self.embedding_dim if self.embedding_dim else default_dim,
            subject_ids=tuple(sorted(set(trials.subject_ids))),
            gat_heads=self.gat_heads,
            gat_leaky_slope=self.gat_leaky_slope,
            transformer_layers=self.transformer_layers,
            transformer_model_dim=self.transformer_model_dim,
            transformer_heads=self.transformer_heads,
            gate_hidden=self.gate_hidden,
            coord_table=coord_table,
            tsconv=tsconv,
            subject_init_noise=self.subject_init_noise,
            shared_subject_map=self.shared_subject_map,
        )


@dataclass
class PreprocessSection:
    dataset_root: str
    band_low_hz: float = 0.1
    band_high_hz: float = 100.0
    filter_order: int = 4
    target_rate_hz: float = 250.0
    epoch_ms: tuple[float, float] = (0.0, 1000.0)
    baseline_ms: tuple[float, float] = (-200.0, 0.0)
    average: bool = True


@dataclass
class PretrainSection:
    trials: str
    patch_len: int = 10
    mask_ratio: float = 0.3
    decoder_width: int = 256
    decoder_depth: int = 2
    decoder_heads: int = 4
    epochs: int = 200
    batch_size: int = 1000
    lr: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    weight_decay: float = 0.01
    loss_on: str = "all"
    standardize: bool = True


@dataclass
class AlignSection:
    train_trials: str
    bank: str
    n_val: int = 0
    split_seed: int = 0
    split_file: str | None = None
    pretrained: str | None = None
    transfer: str = "all"
    alpha: float = 0.1
    batch_size: int = 1000
    max_epochs: int = 150
    patience: int = 10
    n_checkpoints: int = 3
    lr: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    weight_decay: float = 0.01
    temperature_init: float = 1.0 / 0.07
    standardize: bool = True


@dataclass
class EvalSection:
    test_trials: str
    bank: str
    checkpoints: str
    k_list: tuple[int, ...] = (1, 5)
    text: bool = True


@dataclass
class AnalyzeSection:
    kind: str
    train_trials: str | None = None
    test_trials: str | None = None
    bank: str | None = None
    n_val: int = 0
    split_seed: int = 0
    k_list: tuple[int, ...] = (1, 5)
    aligner: dict = field(default_factory=dict)
    pretrained: str | None = None
    transfer: str = "all"
    windows: list | None = None
    bands: list | None = None
    regions: dict | None = None
    checkpoints: str | None = None
    target_metrics: str | None = None
    baseline_metrics: dict | None = None
    metric_space: str = "image_retrieval"
    metric_k: int = 1


@dataclass
class SweepSection:
    train_trials: str
    test_trials: str
    bank: str
    grid: dict
    n_val: int = 0
    split_seed: int = 0
    k_list: tuple[int, ...] = (1,)
    pretrain: dict = field(default_factory=dict)
    aligner: dict = field(default_factory=dict)


TOP_LEVEL_KEYS = {
    "seeds", "encoder", "synthetic", "preprocess", "pretrain", "align",
    "eval", "analyze", "sweep",
}

ALIGNER_PARAM_KEYS = {
    "alpha", "batch_size", "max_epochs", "patience", "n_checkpoints", "lr",
    "betas", "weight_decay", "temperature_init", "standardize",
}


def parse_section(config: dict, name: str, cls):
    if name not in config:
        raise ConfigError(f"config is missing the required '{name}' section")
    return dataclass_from_dict(cls, config[name], name)


def parse_encoder_section(config: dict) -> EncoderSection:
    if "encoder" not in config:
        return EncoderSection()
    return dataclass_from_dict(EncoderSection, config["encoder"], "encoder")


def parse_aligner_dict(params: dict, where: str) -> dict:
    reject_unknown_keys(params, ALIGNER_PARAM_KEYS, where)
    out = dict(params)
    if "betas" in out:
        out["betas"] = tuple(out["betas"])
    return out


# --- manifest and artifact helpers -----------------------------------------

def git_revision() -> str | None:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
        )
    except (OSError, subprocess.TimeoutExpired):
        return None
    if out.returncode != 0:
        return None
    return out.stdout.strip()


def write_manifest(
    out_dir: Path,
    command: str,
    config_echo: dict,
    seeds: list[int],
    started: float,
    status: str,
    artifacts: list[str],
    error: str | None = None,
) -> None:
    manifest = {
        "command": command,
        "config": config_echo,
        "seeds": seeds,
        "out": str(out_dir),
        "git_revision": git_revision(),
        "started_utc": datetime.datetime.fromtimestamp(
            started, datetime.timezone.utc
        ).isoformat(),
        "elapsed_seconds": round(time.time() - started, 3),
        "status": status,
        "artifacts": sorted(artifacts),
        "error": error,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "run_manifest.json"
    tmp = target.with_suffix(".json.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, target)


def refuse_overwrite(paths: list[Path], force: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise ConfigError(
            f"refusing to overwrite existing artifacts (pass --force): {existing}"
        )


def write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv_rows(path: Path, header: list[str], rows: list[list]) -> None:
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def resolve_container(path_text: str, what: str) -> str:
    """Resolve a container base path, falling back to the feature cache."""
    if manifest_path(path_text).exists():
        return path_text
    cached = cache_dir() / Path(path_text).name
    if manifest_path(cached).exists():
        return str(cached)
    raise ConfigError(
        f"{what} not found: neither {manifest_path(path_text)} nor "
        f"{manifest_path(cached)} exists"
    )


def format_template(template: str, seed: int, where: str) -> str:
    try:
        return template.format(seed=seed)
    except (KeyError, IndexError, ValueError) as exc:
        raise ConfigError(
            f"{where} template {template!r} only supports the {{seed}} placeholder: {exc}"
        ) from exc


def expand_checkpoints(template: str, seed: int) -> list[str]:
    """Expand a checkpoint path template ({seed} and shell globs) to base paths."""
    pattern = format_template(template, seed, "checkpoints")
    matches = sorted(glob.glob(pattern + ".manifest.json"))
    if not matches:
        raise ConfigError(
            f"no alignment checkpoints match {pattern}.manifest.json for seed {seed}"
        )
    return [m[: -len(".manifest.json")] for m in matches]


def parse_seed_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError as exc:
        raise ConfigError(f"invalid --seed list {text!r}: {exc}") from exc


def resolve_seeds(args, config: dict) -> list[int]:
    if args.seed is not None:
        return parse_seed_list(args.seed)
    if "seeds" in config:
        seeds = config["seeds"]
        if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("config 'seeds' must be a list of integers")
        return list(seeds)
    return list(DEFAULT_SEEDS)


# --- commands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    started = time.time()
    config = load_json_config(args.config)
    reject_unknown_keys(config, TOP_LEVEL_KEYS, "config")
    seeds = resolve_seeds(args, config)
    spec = parse_section(config, "synthetic", SyntheticSpec)
    if args.seed is not None:
        spec.seed = seeds[0]
    out = Path(args.out)
    targets = [out / name for name in ("train_trials", "test_trials", "bank")]
    refuse_overwrite([manifest_path(t) for t in targets], args.force)
    train, test, bank = generate_synthetic(spec)
    out.mkdir(parents=True, exist_ok=True)
    save_trials(out / "train_trials", train)
    save_trials(out / "test_trials", test)
    save_bank(out / "bank", bank)
    artifacts = [str(manifest_path(t)) for t in targets]
    if os.environ.get("NEURODECODE_CACHE"):
        cache = cache_dir()
        cache.mkdir(parents=True, exist_ok=True)
        for name in ("bank.manifest.json", "bank.f32"):
            shutil.copy2(out / name, cache / name)
        logger.info("copied feature bank into cache %s", cache)
    write_manifest(out, "synth", config, [spec.seed], started, "ok", artifacts)
    logger.info("synth: %d train / %d test trials -> %s", train.n_trials, test.n_trials, out)
    return 0


def cmd_preprocess(args) -> int:
    started = time.time()
    config = load_json_config(args.config)
    reject_unknown_keys(config, TOP_LEVEL_KEYS, "config")
    section = parse_section(config, "preprocess", PreprocessSection)
    from .preprocessing import PreprocessConfig, preprocess

    out = Path(args.out)
    refuse_overwrite([manifest_path(out / "trials")], args.force)
    recordings = read_raw_dataset(section.dataset_root)
    pp_config = PreprocessConfig(
        band_low_hz=section.band_low_hz,
        band_high_hz=section.band_high_hz,
        filter_order=section.filter_order,
        target_rate_hz=section.target_rate_hz,
        epoch_ms=tuple(section.epoch_ms),
        baseline_ms=tuple(section.baseline_ms),
    )
    trials = preprocess(recordings, pp_config)
    if section.average:
        trials, counts = average_repetitions(trials, return_counts=True)
        logger.info("averaged repetitions: group sizes %d..%d", min(counts), max(counts))
    save_trials(out / "trials", trials)
    write_manifest(
        out, "preprocess", config, [], started, "ok",
        [str(manifest_path(out / "trials"))],
    )
    logger.info("preprocess: %d trials at %g Hz -> %s", trials.n_trials,
                trials.sample_rate_hz, out)
    return 0


def cmd_pretrain(args) -> int:
    started = time.time()
    config = load_json_config(args.config)
    reject_unknown_keys(config, TOP_LEVEL_KEYS, "config")
    seeds = resolve_seeds(args, config)
    section = parse_section(config, "pretrain", PretrainSection)
    encoder_section = parse_encoder_section(config)
    out = Path(args.out)
    targets = [manifest_path(out / f"pretrain_seed{s}") for s in seeds]
    refuse_overwrite(targets, args.force)
    trials = load_trials(resolve_container(section.trials, "pretrain trials"))
    check_trials(trials)
    artifacts = []
    for seed in seeds:
        encoder_config = encoder_section.build(trials, default_dim=64)
        trainer = MaskedReconstructionPretrainer(
            patch_len=section.patch_len,
            mask_ratio=section.mask_ratio,
            decoder_width=section.decoder_width,
            decoder_depth=section.decoder_depth,
            decoder_heads=section.decoder_heads,
            epochs=section.epochs,
            batch_size=section.batch_size,
            lr=section.lr,
            betas=tuple(section.betas),
            weight_decay=section.weight_decay,
            loss_on=section.loss_on,
            standardize=section.standardize,
            encoder_config=encoder_config,
            seed=seed,
        )
        trainer.fit(trials)
        base = out / f"pretrain_seed{seed}"
        save_encoder_checkpoint(
            base, trainer.encoder_,
            extra_metadata={"seed": seed, "final_loss": float(trainer.loss_history_[-1])},
        )
        save_loss_history(out / f"pretrain_seed{seed}_loss.csv", trainer.loss_history_)
        artifacts += [str(manifest_path(base)), str(out / f"pretrain_seed{seed}_loss.csv")]
        logger.info("pretrain seed %d: final loss %.6f", seed, trainer.loss_history_[-1])
    write_manifest(out, "pretrain", config, seeds, started, "ok", artifacts)
    return 0


def cmd_align(args) -> int:
    started = time.time()
    config = load_json_config(args.config)
    reject_unknown_keys(config, TOP_LEVEL_KEYS, "config")
    seeds = resolve_seeds(args, config)
    section = parse_section(config, "align", AlignSection)
    if args.alpha is not None:
        section.alpha = args.alpha
    encoder_section = parse_encoder_section(config)
    out = Path(args.out)
    first_targets = [manifest_path(out / f"align_seed{s}_ck0") for s in seeds]
    refuse_overwrite(first_targets, args.force)

    trials = load_trials(resolve_container(section.train_trials, "training trials"))
    bank = load_bank(resolve_container(section.bank, "feature bank"))
    split_file = Path(section.split_file) if section.split_file else out / "split.json"
    if section.n_val > 0:
        train_idx, val_idx = ensure_split(
            split_file, trials.n_trials, section.n_val, section.split_seed,
            trials.concept_ids,
        )
        fit_train, fit_val = trials.select(train_idx), trials.select(val_idx)
    else:
        fit_train, fit_val = trials, None

    artifacts = []
    for seed in seeds:
        encoder_config = encoder_section.build(trials, default_dim=bank.embedding_dim)
        pretrained_state = None
        if section.pretrained:
            pre_path = format_template(section.pretrained, seed, "align.pretrained")
            encoder, _ = load_encoder_checkpoint(
                resolve_container(pre_path, "pretrained checkpoint")
            )
            pretrained_state = encoder.state_dict()
        aligner = TrimodalAligner(
            alpha=section.alpha,
            batch_size=section.batch_size,
            max_epochs=section.max_epochs,
            patience=section.patience,
            n_checkpoints=section.n_checkpoints,
            lr=section.lr,
            betas=tuple(section.betas),
            weight_decay=section.weight_decay,
            temperature_init=section.temperature_init,
            encoder_config=encoder_config,
            pretrained_state=pretrained_state,
            transfer=section.transfer,
            standardize=section.standardize,
            seed=seed,
        )
        aligner.fit(fit_train, bank, fit_val)
        for j, ck in enumerate(aligner.checkpoints_):
            base = out / f"align_seed{seed}_ck{j}"
            save_alignment_checkpoint(base, ck)
            artifacts.append(str(manifest_path(base)))
        history_path = out / f"align_seed{seed}_history.csv"
        save_alignment_history(history_path, aligner.history_)
        artifacts.append(str(history_path))
        logger.info(
            "align seed %d: stopped at epoch %d, best val %s",
            seed, aligner.stopped_epoch_,
            f"{aligner.checkpoints_[0].val_loss:.4f}" if aligner.checkpoints_ else "-",
        )
    if section.n_val > 0:
        artifacts.append(str(split_file))
    write_manifest(out, "align", config, seeds, started, "ok", artifacts)
    return 0


def _eval_one_space(checkpoints, test, bank, candidates, k_list, space):
    sims, cand = ensemble_predict(checkpoints, test, bank, candidates, space)
    result = zero_shot_retrieval(sims, test.image_ids, cand, k_list, test.subject_ids)
    return result


def cmd_eval(args) -> int:
    started = time.time()
    config = load_json_config(args.config)
    reject_unknown_keys(config, TOP_LEVEL_KEYS, "config")
    seeds = resolve_seeds(args, config)
    section = parse_section(config, "eval", EvalSection)
    if args.top_k is not None:
        section.k_list = tuple(int(k) for k in args.top_k.split(","))
    out = Path(args.out)
    refuse_overwrite([out / "metrics.json", out / "metrics.csv"], args.force)
    test = load_trials(resolve_container(section.test_trials, "test trials"))
    bank = load_bank(resolve_container(section.bank, "feature bank"))
    candidates = sorted(set(test.image_ids))
    spaces = ["image"] + (["text"] if section.text else [])
    per_seed: dict[str, dict] = {}
    for seed in seeds:
        bases = expand_checkpoints(section.checkpoints, seed)
        checkpoints = [load_alignment_checkpoint(b) for b in bases]
        seed_result = {}
        for space in spaces:
            result = _eval_one_space(
                checkpoints, test, bank, candidates, section.k_list, space
            )
            seed_result[f"{space}_retrieval"] = result.to_dict()
        per_seed[str(seed)] = seed_result
    metrics = {}
    for space in spaces:
        key = f"{space}_retrieval"
        agg = {
            "top_k": {
                str(k): float(np.mean([per_seed[str(s)][key]["top_k"][str(k)] for s in seeds]))
                for k in section.k_list
            },
            "top_k_std": {
                str(k): float(np.std([per_seed[str(s)][key]["top_k"][str(k)] for s in seeds]))
                for k in section.k_list
            },
        }
        metrics[key] = {"aggregate": agg, "per_seed": {s: per_seed[s][key] for s in per_seed}}
    metrics["n_candidates"] = len(candidates)
    metrics["chance_top_k"] = {str(k): k / len(candidates) for k in section.k_list}
    write_json(out / "metrics.json", metrics)
    csv_rows = []
    for space in spaces:
        key = f"{space}_retrieval"
        for k in section.k_list:
            csv_rows.append([
                key, k,
                repr(metrics[key]["aggregate"]["top_k"][str(k)]),
                repr(metrics[key]["aggregate"]["top_k_std"][str(k)]),
            ])
    write_csv_rows(out / "metrics.csv", ["metric", "k", "mean", "std"], csv_rows)
    write_manifest(
        out, "eval", config, seeds, started, "ok",
        [str(out / "metrics.json"), str(out / "metrics.csv")],
    )
    for space in spaces:
        key = f"{space}_retrieval"
        logger.info("%s: %s", key, metrics[key]["aggregate"]["top_k"])
    return 0


def _analysis_pipeline(section: AnalyzeSection, train, bank, encoder_section, seeds):
    aligner_params = parse_aligner_dict(section.aligner, "analyze.aligner")
    default_dim = bank.embedding_dim
    encoder_config = encoder_section.build(train, default_dim=default_dim)
    pretrained_state = None
    if section.pretrained:
        pre_path = format_template(section.pretrained, seeds[0], "analyze.pretrained")
        encoder, _ = load_encoder_checkpoint(
            resolve_container(pre_path, "pretrained checkpoint")
        )
        pretrained_state = encoder.state_dict()
    return AnalysisPipeline(
        encoder_config=encoder_config,
        aligner_params=aligner_params,
        n_val=section.n_val,
        split_seed=section.split_seed,
        k_list=tuple(section.k_list),
        pretrained_state=pretrained_state,
        transfer=section.transfer,
    )


def _subject_scores(metrics: dict, space: str, k: int) -> tuple[list[str], list[float]]:
    """Per-subject top-k scores averaged over seeds, ordered by subject id."""
    per_seed = metrics[space]["per_seed"]
    subjects = sorted(
        {s for seed_block in per_seed.values() for s in seed_block["per_subject"]}
    )
    scores = []
    for subject in subjects:
        vals = [
            seed_block["per_subject"][subject][str(k)]
            for seed_block in per_seed.values()
        ]
        scores.append(float(np.mean(vals)))
    return subjects, scores


def cmd_analyze(args) -> int:
    started = time.time()
    config = load_json_config(args.config)
    reject_unknown_keys(config, TOP_LEVEL_KEYS, "config")
    seeds = resolve_seeds(args, config)
    section = parse_section(config, "analyze", AnalyzeSection)
    encoder_section = parse_encoder_section(config)
    out = Path(args.out)
    kind = section.kind
    json_path = out / f"analysis_{kind}.json"
    refuse_overwrite([json_path], args.force)

    if kind in ("window", "region", "band"):
        for name in ("train_trials", "test_trials", "bank"):
            if getattr(section, name) is None:
                raise ConfigError(f"analyze.{name} is required for kind '{kind}'")
        train = load_trials(resolve_container(section.train_trials, "training trials"))
        test = load_trials(resolve_container(section.test_trials, "test trials"))
        bank = load_bank(resolve_container(section.bank, "feature bank"))
        pipeline = _analysis_pipeline(section, train, bank, encoder_section, seeds)
        if kind == "window":
            windows = None
            if section.windows is not None:
                windows = [
                    dataclass_from_dict(WindowSpec, w, "analyze.windows") for w in section.windows
                ]
            rows = temporal_window_analysis(train, test, bank, pipeline, windows, seeds)
        elif kind == "region":
            region_map = section.regions or region_map_from_names(train.channel_names)
            rows = spatial_region_analysis(train, test, bank, pipeline, region_map, seeds)
        else:
            bands = None
            if section.bands is not None:
                bands = [
                    dataclass_from_dict(BandSpec, b, "analyze.bands") for b in section.bands
                ]
            rows = spectral_band_analysis(train, test, bank, pipeline, bands, seeds)
        payload = {"kind": kind, "seeds": seeds, "rows": rows}
        header = sorted({key for row in rows for key in row if key not in ("per_seed",)})
        csv_rows = [[json.dumps(row.get(col)) for col in header] for row in rows]
    elif kind == "rsa":
        if section.test_trials is None or section.bank is None or section.checkpoints is None:
            raise ConfigError("analyze kind 'rsa' requires test_trials, bank, checkpoints")
        test = load_trials(resolve_container(section.test_trials, "test trials"))
        bank = load_bank(resolve_container(section.bank, "feature bank"))
        bases = expand_checkpoints(section.checkpoints, seeds[0])
        best = load_alignment_checkpoint(bases[0])
        from .align import _checkpoint_model, normalize_rows
        import torch

        from .trials import zscore_trials

        encoder, _proj = _checkpoint_model(best, test.channel_names)
        with torch.no_grad():
            embeddings = normalize_rows(
                encoder(
                    torch.as_tensor(zscore_trials(test).data, dtype=torch.float32),
                    test.subject_ids,
                )
            ).numpy()
        means, concepts = concept_mean_embeddings(embeddings, test.concept_ids)
        categories = [bank.category_for_concept(c) for c in concepts]
        matrix, stats = rsa_matrix(means, categories)
        for block in stats.values():
            # categories with a single concept have no intra pairs; keep the
            # JSON strict by storing null instead of NaN
            for key in ("intra_mean", "inter_mean"):
                if not np.isfinite(block[key]):
                    block[key] = None
        payload = {
            "kind": "rsa",
            "concepts": concepts,
            "categories": categories,
            "matrix": [[float(v) for v in row] for row in matrix],
            "stats": stats,
        }
        header = ["category", "intra_mean", "inter_mean", "n_intra_pairs", "n_inter_pairs"]
        csv_rows = [
            [c, repr(stats[c]["intra_mean"]), repr(stats[c]["inter_mean"]),
             int(stats[c]["n_intra_pairs"]), int(stats[c]["n_inter_pairs"])]
            for c in sorted(stats)
        ]
    elif kind == "stats":
        if section.target_metrics is None or not section.baseline_metrics:
            raise ConfigError("analyze kind 'stats' requires target_metrics and baseline_metrics")
        with open(section.target_metrics, "r", encoding="utf-8") as fh:
            target = json.load(fh)
        subjects, target_scores = _subject_scores(
            target, section.metric_space, section.metric_k
        )
        baselines = {}
        for name, path in section.baseline_metrics.items():
            with open(path, "r", encoding="utf-8") as fh:
                base_metrics = json.load(fh)
            base_subjects, base_scores = _subject_scores(
                base_metrics, section.metric_space, section.metric_k
            )
            if base_subjects != subjects:
                raise ConfigError(
                    f"baseline {name!r} covers subjects {base_subjects}, "
                    f"target covers {subjects}"
                )
            baselines[name] = base_scores
        report = wilcoxon_holm(target_scores, baselines)
        payload = {"kind": "stats", "subjects": subjects, "report": report.to_dict()}
        header = ["name", "n_effective", "p_raw", "p_holm", "effect_size", "degenerate"]
        csv_rows = [
            [r.name, r.n_effective, repr(r.p_raw), repr(r.p_holm),
             repr(r.effect_size), r.degenerate]
            for r in report.comparisons
        ]
    else:
        raise ConfigError(
            f"unknown analyze kind {kind!r}; choose from window, region, band, rsa, stats"
        )

    write_json(json_path, payload)
    write_csv_rows(out / f"analysis_{kind}.csv", header, csv_rows)
    write_manifest(
        out, "analyze", config, seeds, started, "ok",
        [str(json_path), str(out / f"analysis_{kind}.csv")],
    )
    return 0


def cmd_sweep(args) -> int:
    started = time.time()
    config = load_json_config(args.config)
    reject_unknown_keys(config, TOP_LEVEL_KEYS, "config")
    seeds = resolve_seeds(args, config)
    section = parse_section(config, "sweep", SweepSection)
    encoder_section = parse_encoder_section(config)
    out = Path(args.out)
    refuse_overwrite([out / "sweep.json", out / "sweep.csv"], args.force)

    allowed_axes = {"decoder", "mask_ratio", "alpha", "transfer"}
    reject_unknown_keys(section.grid, allowed_axes, "sweep.grid")
    axes = {name: list(values) for name, values in section.grid.items()}
    if not axes:
        raise ConfigError("sweep.grid must define at least one axis")

    train = load_trials(resolve_container(section.train_trials, "training trials"))
    test = load_trials(resolve_container(section.test_trials, "test trials"))
    bank = load_bank(resolve_container(section.bank, "feature bank"))
    base_aligner = parse_aligner_dict(section.aligner, "sweep.aligner")
    needs_pretrain = bool(section.pretrain) or "decoder" in axes or "mask_ratio" in axes

    import itertools

    names = sorted(axes)
    cells = list(itertools.product(*[axes[n] for n in names]))
    rows = []
    for values in cells:
        cell = dict(zip(names, values))
        label = ", ".join(f"{k}={v}" for k, v in cell.items())
        logger.info("sweep cell: %s", label)
        try:
            accs = []
            for seed in seeds:
                encoder_config = encoder_section.build(train, default_dim=bank.embedding_dim)
                pretrained_state = None
                if needs_pretrain:
                    pre_params = dict(section.pretrain)
                    if "decoder" in cell:
                        width, depth = cell["decoder"]
                        pre_params["decoder_width"] = int(width)
                        pre_params["decoder_depth"] = int(depth)
                    if "mask_ratio" in cell:
                        pre_params["mask_ratio"] = float(cell["mask_ratio"])
                    trainer = MaskedReconstructionPretrainer(
                        encoder_config=encoder_config, seed=seed, **pre_params
                    )
                    trainer.fit(train)
                    pretrained_state = trainer.encoder_.state_dict()
                aligner_params = dict(base_aligner)
                if "alpha" in cell:
                    aligner_params["alpha"] = float(cell["alpha"])
                transfer = cell.get("transfer", "all")
                pipeline = AnalysisPipeline(
                    encoder_config=encoder_config,
                    aligner_params=aligner_params,
                    n_val=section.n_val,
                    split_seed=section.split_seed,
                    k_list=tuple(section.k_list),
                    pretrained_state=pretrained_state,
                    transfer=transfer,
                )
                from .analyses import run_alignment_eval

                result = run_alignment_eval(train, test, bank, pipeline, seed)
                accs.append(result["top_k"][section.k_list[0]])
            rows.append({
                **{k: v for k, v in cell.items()},
                "status": "ok",
                "mean": float(np.mean(accs)),
                "std": float(np.std(accs)),
                "per_seed": {str(s): a for s, a in zip(seeds, accs)},
            })
        except Exception as exc:  # keep sweeping; record the failure
            logger.exception("sweep cell failed: %s", label)
            rows.append({**cell, "status": "failed", "error": f"{type(exc).__name__}: {exc}"})
    payload = {"kind": "sweep", "seeds": seeds, "k": section.k_list[0], "rows": rows}
    write_json(out / "sweep.json", payload)
    header = names + ["status", "mean", "std"]
    csv_rows = [
        [json.dumps(row.get(c)) if not isinstance(row.get(c), (int, float, str)) else row.get(c)
         for c in header]
        for row in rows
    ]
    write_csv_rows(out / "sweep.csv", header, csv_rows)
    write_manifest(
        out, "sweep", config, seeds, started, "ok",
        [str(out / "sweep.json"), str(out / "sweep.csv")],
    )
    return 0


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neurodecode",
        description="Two-stage EEG-to-image decoding pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default="runs", help="output directory")
        p.add_argument("--seed", default=None, help="comma-separated seed list")
        p.add_argument("--force", action="store_true", help="overwrite existing artifacts")

    p = sub.add_parser("synth", help="generate a synthetic dataset and feature bank")
    add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="preprocess a raw dataset into trials")
    add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("pretrain", help="masked-reconstruction pretraining")
    add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("align", help="contrastive alignment training")
    add_common(p)
    p.add_argument("--alpha", type=float, default=None, help="override the loss mix weight")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("eval", help="zero-shot retrieval evaluation")
    add_common(p)
    p.add_argument("--top-k", default=None, help="comma-separated k values")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="window/region/band/rsa/stats analyses")
    add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="grid sweep over pretraining/alignment settings")
    add_common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContainerFormatError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 2
    except Exception:
        logger.exception("command failed")
        return 1


if __name__ == "__main__":
    sys.exit(main())
