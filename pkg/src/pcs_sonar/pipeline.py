"""End-to-end experiment pipeline over generated datasets.

Builds patch pools and models from a dataset directory, sweeps
(training size x regime x noise x partition) cells, and emits per-cell and
aggregate CSVs.  Every cell derives its randomness from the experiment seed,
so reruns reproduce output files byte for byte; partitions are shared
between the patch classifier and the whole-image baseline by construction.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .anomaly_detector import detect_anomaly
from .config import ConfigError, RunConfig
from .dict_learn import learn_dictionary
from .patch_sampler import (
    Image,
    build_dictionary,
    intensity_mask,
    load_image,
    sample_patches,
)
from .pcs_classifier import (
    LikelihoodRecord,
    PcsModel,
    build_src_baseline,
    classify_patch_set,
    cross_validate,
    evaluate,
    evaluate_src,
    load_model,
    sample_test_patches,
    save_model,
    write_eval_csv,
)
from .sas_synth import NoiseSpec, generate_dataset
from .sparse_solver import solve_spike_slab

log = logging.getLogger("pcs_sonar")


def _derived_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def load_manifest(dataset_root) -> list[dict]:
    path = Path(dataset_root) / "manifest.csv"
    if not path.exists():
        raise ConfigError(f"no manifest.csv under {dataset_root}; run synth first")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class DatasetIndex:
    """Manifest rows grouped by (class, regime); row position = instance id."""

    def __init__(self, dataset_root):
        self.root = Path(dataset_root)
        self.rows = load_manifest(dataset_root)
        self._groups: dict[tuple[str, str], list[dict]] = {}
        for row in self.rows:
            self._groups.setdefault((row["class"], row["regime"]), []).append(row)
        for group in self._groups.values():
            group.sort(key=lambda r: r["path"])

    def instances(self, label: str, regime: str) -> list[dict]:
        key = (label, regime)
        if key not in self._groups:
            raise ConfigError(f"dataset has no images for class {label!r}, regime {regime!r}")
        return self._groups[key]

    def image(self, row: dict) -> Image:
        return load_image(self.root / row["path"], label=row["class"], regime=row["regime"])


def partition_indices(n: int, train_size: int, test_count: int, partition: int, seed: int):
    """Seeded shuffle shared by every algorithm: first train_size instances
    train, the next test_count test (disjoint within the partition)."""
    if train_size + test_count > n:
        raise ConfigError(
            f"partition needs {train_size}+{test_count} instances but only {n} exist"
        )
    perm = np.random.default_rng([seed, partition]).permutation(n)
    return perm[:train_size], perm[train_size : train_size + test_count]


def build_pools(images_by_class, patch_cfg):
    """P patches per training image, grouped into per-class pools."""
    patch_sets = []
    pools = []
    for ci, (label, images) in enumerate(images_by_class):
        class_sets = []
        for ii, img in enumerate(images):
            mask = intensity_mask(img, patch_cfg.threshold_percentile)
            ps = sample_patches(
                img, mask.mask, patch_cfg,
                np.random.default_rng([patch_cfg.seed, ci, ii]),
                source_id=f"{label}/{ii}",
            )
            ps.label = label
            class_sets.append(ps)
        patch_sets.extend(class_sets)
        pools.append(np.hstack([ps.patches for ps in class_sets]))
    return patch_sets, pools


def train_pcs_model(images_by_class, cfg: RunConfig) -> PcsModel:
    """Patch extraction -> dictionary (learned or raw) -> penalty tuning."""
    patch_cfg = cfg.patch_config()
    solver_opts = cfg.solver_options()
    patch_sets, pools = build_pools(images_by_class, patch_cfg)
    if cfg["dfdl"]["enabled"]:
        dictionary = learn_dictionary(patch_sets, cfg.dfdl_config())
    else:
        sub = cfg["patch"]["per_class_subsample"] or None
        dictionary = build_dictionary(
            patch_sets, per_class_subsample=sub,
            rng=np.random.default_rng([patch_cfg.seed, 7777]),
        )
    order = [lbl for lbl, _ in images_by_class]
    if dictionary.class_labels != order:  # grouping preserves first-seen order
        raise RuntimeError("dictionary class order diverged from input order")
    params, references = cross_validate(pools, dictionary, cfg.cv_config(), solver_opts)
    return PcsModel(dictionary, params, patch_cfg, references)


def classify_image(image: Image, model: PcsModel, solver_opts, image_index: int = 0) -> LikelihoodRecord:
    ps = sample_test_patches(
        image, model.patch_config,
        np.random.default_rng([model.patch_config.seed, image_index]),
    )
    return classify_patch_set(ps, model, solver_opts)


# ---------------------------------------------------------------------------
# subcommand drivers


def run_synth(cfg: RunConfig) -> Path:
    manifest = cfg.dataset_manifest()
    root = Path(cfg["paths"]["dataset_root"])
    path = generate_dataset(manifest, root)
    log.info("dataset written under %s", root)
    return path


def _training_images(index: DatasetIndex, cfg: RunConfig, train_size: int, partition: int):
    labels = list(cfg["synth"]["classes"])
    regime = cfg["experiment"]["train_regime"]
    seed = cfg["experiment"]["seed"]
    by_class = []
    per_class_train = {}
    for label in labels:
        rows = index.instances(label, regime)
        train_idx, _ = partition_indices(len(rows), train_size, 0, partition, seed)
        per_class_train[label] = sorted(int(i) for i in train_idx)
        by_class.append((label, [index.image(rows[i]) for i in per_class_train[label]]))
    return by_class, per_class_train


def run_train(cfg: RunConfig) -> Path:
    index = DatasetIndex(cfg["paths"]["dataset_root"])
    by_class, _ = _training_images(index, cfg, cfg["experiment"]["train_size"], partition=0)
    model = train_pcs_model(by_class, cfg)
    model_dir = Path(cfg["paths"]["model_dir"])
    save_model(model, model_dir)
    log.info("model saved under %s", model_dir)
    return model_dir


def _collect_pgms(paths) -> list[Path]:
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            out.extend(sorted(p.rglob("*.pgm")))
        else:
            out.append(p)
    if not out:
        raise ConfigError("no input images given")
    return out


def run_classify(cfg: RunConfig, image_paths, screen: bool = False) -> Path:
    model = load_model(cfg["paths"]["model_dir"])
    solver_opts = cfg.solver_options()
    files = _collect_pgms(image_paths)
    out_dir = Path(cfg["paths"]["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    name = "screen.csv" if screen else "classify.csv"
    header = ["path", "predicted"] + [f"loglik_{lbl}" for lbl in model.class_labels]
    if screen:
        header += ["ks_stat", "ks_threshold", "flagged"]
    lines = [",".join(header)]
    for i, path in enumerate(files):
        record = classify_image(load_image(path), model, solver_opts, image_index=i)
        row = [str(path), record.predicted_label]
        row += [repr(float(v)) for v in record.log_likelihoods]
        if screen:
            decision = detect_anomaly(
                record, model, alpha=cfg["anomaly"]["alpha"],
                min_test_samples=cfg["anomaly"]["min_test"],
                min_reference=cfg["anomaly"]["min_reference"],
            )
            row += [repr(decision.statistic), repr(decision.threshold),
                    "true" if decision.flagged else "false"]
        lines.append(",".join(row))
    out_path = out_dir / name
    out_path.write_text("\n".join(lines) + "\n")
    log.info("wrote %s", out_path)
    return out_path


def _cell_noise(cfg: RunConfig, size, regime_i, sigma, sigma_i, partition) -> NoiseSpec | None:
    if sigma == 0.0:
        return None
    seed = _derived_seed(cfg["experiment"]["seed"], 101, size, regime_i, sigma_i, partition)
    return NoiseSpec(sigma, seed=seed, mode=cfg["experiment"]["noise_mode"])


def _training_fingerprint(cfg: RunConfig, size: int, partition: int) -> str:
    """Hash of everything that shapes a trained model, for safe cache reuse."""
    exp = cfg["experiment"]
    parts = [
        repr(sorted(cfg["patch"].items())),
        repr(sorted(cfg["solver"].items())),
        repr(sorted(cfg["dfdl"].items())),
        repr(sorted(cfg["cv"].items())),
        repr(sorted(cfg["synth"].items())),
        cfg["paths"]["dataset_root"],
        exp["train_regime"],
        str(exp["seed"]),
        str(size),
        str(partition),
    ]
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


def _model_for_partition(cfg: RunConfig, index: DatasetIndex, size: int, partition: int):
    """Train (or load from the optional cache) the model for one partition."""
    by_class, _ = _training_images(index, cfg, size, partition)
    cache_root = cfg["paths"]["model_cache_dir"]
    if cache_root:
        tag = _training_fingerprint(cfg, size, partition)
        cache_dir = Path(cache_root) / f"size{size}_part{partition}_{tag}"
        if (cache_dir / "model.cfg").exists():
            log.info("model cache hit: %s", cache_dir)
            return load_model(cache_dir), by_class
        model = train_pcs_model(by_class, cfg)
        save_model(model, cache_dir)
        return model, by_class
    return train_pcs_model(by_class, cfg), by_class


def _partition_task(payload):
    """Train one (size, partition) model pair and evaluate all its cells."""
    values, size, partition = payload
    cfg = RunConfig(values)
    exp = cfg["experiment"]
    index = DatasetIndex(cfg["paths"]["dataset_root"])
    labels = list(cfg["synth"]["classes"])
    seed = exp["seed"]

    model, by_class = _model_for_partition(cfg, index, size, partition)
    baseline = build_src_baseline(by_class, l1_lambda=cfg["src"]["lambda"])
    solver_opts = cfg.solver_options()

    results = []
    for ri, regime in enumerate(exp["regimes"]):
        test_by_class = []
        for label in labels:
            rows = index.instances(label, regime)
            _, test_idx = partition_indices(
                len(rows), size, exp["test_per_class"], partition, seed
            )
            test_by_class.extend(index.image(rows[i]) for i in sorted(int(i) for i in test_idx))
        for si, sigma in enumerate(exp["sigmas"]):
            noise = _cell_noise(cfg, size, ri, sigma, si, partition)
            meta = {"training_size": size, "partition": partition}
            pcs_report = evaluate(model, test_by_class, regime=regime, noise=noise,
                                  solver_opts=solver_opts, metadata=meta)
            src_report = evaluate_src(baseline, test_by_class, regime=regime,
                                      noise=noise, metadata=meta)
            results.append((size, regime, sigma, partition, pcs_report, src_report))
    return results


def run_evaluate(cfg: RunConfig, jobs: int = 1) -> Path:
    """Full sweep; per-cell CSVs plus a sorted aggregate CSV, reproducible
    byte-for-byte from (config, seed)."""
    exp = cfg["experiment"]
    out_dir = Path(cfg["paths"]["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [
        (cfg.values, size, partition)
        for size in exp["training_sizes"]
        for partition in range(exp["partitions"])
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            all_results = list(pool.map(_partition_task, tasks))
    else:
        all_results = [_partition_task(t) for t in tasks]

    cells = [cell for group in all_results for cell in group]
    order = {
        (size, regime, sigma, part): (
            exp["training_sizes"].index(size),
            exp["regimes"].index(regime),
            exp["sigmas"].index(sigma),
            part,
        )
        for (size, regime, sigma, part, _, _) in cells
    }
    cells.sort(key=lambda c: order[(c[0], c[1], c[2], c[3])])

    agg_lines = [
        "training_size,regime,sigma,partition,"
        "pcs_mean_recall,pcs_mean_precision,src_mean_recall,src_mean_precision"
    ]
    for size, regime, sigma, partition, pcs_report, src_report in cells:
        tag = f"size{size}_{regime}_sig{sigma:g}_part{partition}"
        write_eval_csv(pcs_report, out_dir / f"cell_{tag}_pcs.csv")
        write_eval_csv(src_report, out_dir / f"cell_{tag}_src.csv")
        agg_lines.append(
            f"{size},{regime},{repr(float(sigma))},{partition},"
            f"{repr(pcs_report.mean_recall)},{repr(pcs_report.mean_precision)},"
            f"{repr(src_report.mean_recall)},{repr(src_report.mean_precision)}"
        )
    agg_path = out_dir / "aggregate.csv"
    agg_path.write_text("\n".join(agg_lines) + "\n")
    log.info("aggregate written to %s", agg_path)
    return agg_path


def run_bench(cfg: RunConfig) -> Path:
    """Wall-clock timings for training, one patch solve, and one full image."""
    index = DatasetIndex(cfg["paths"]["dataset_root"])
    exp = cfg["experiment"]
    labels = list(cfg["synth"]["classes"])
    available = min(len(index.instances(lbl, exp["train_regime"])) for lbl in labels)
    train_size = min(exp["train_size"], available - 1)

    t0 = time.perf_counter()
    by_class, _ = _training_images(index, cfg, train_size, partition=0)
    model = train_pcs_model(by_class, cfg)
    t_train = time.perf_counter() - t0

    rows0 = index.instances(labels[0], exp["train_regime"])
    test_img = index.image(rows0[-1])
    mask = intensity_mask(test_img, model.patch_config.threshold_percentile)
    ps = sample_patches(test_img, mask.mask, model.patch_config, np.random.default_rng(0))
    solver_opts = cfg.solver_options()

    t0 = time.perf_counter()
    solve_spike_slab(ps.patches[:, 0], model.dictionary, model.params, solver_opts)
    t_patch = time.perf_counter() - t0

    t0 = time.perf_counter()
    classify_patch_set(ps, model, solver_opts)
    t_image = time.perf_counter() - t0

    out_dir = Path(cfg["paths"]["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "bench.csv"
    path.write_text(
        "stage,seconds\n"
        f"train,{repr(t_train)}\n"
        f"classify-1-patch,{repr(t_patch)}\n"
        f"classify-full-image,{repr(t_image)}\n"
    )
    log.info("bench written to %s", path)
    return path
