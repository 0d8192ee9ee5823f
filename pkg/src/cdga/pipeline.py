"""Offline pipeline: scan -> generate -> benchmark -> diagnose -> report.

Stages are idempotent: each one hashes the configuration slice that
determines its outputs, records completion in the run ledger, and is
skipped on rerun while that hash matches and its artifacts are intact (a
rerun of an unchanged experiment performs zero backend calls).  Stages
ensure their parents first, so any CLI entry point works from a cold
start.  Generation failures leave the stage partial: completed work is
kept, the failing tasks are reported, and a rerun retries only them.
"""

from __future__ import annotations

import json
import shutil
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from cdga.backends import build_backend
from cdga.config import ExperimentConfig, config_hash
from cdga.dataset import (
    AugmentationMode,
    CountTable,
    DomainDatasetManifest,
    balanced_batch_sizes,
    count_per_class_domain,
    load_manifest,
    parse_generated_domain,
    save_manifest,
    scan_dataset,
)
from cdga.generation import execute_plan, materialize_augmented_dataset, plan_augmentation
from cdga.ledger import RunLedger
from cdga.models import ModelSpec, build_model
from cdga.selection import ResultTable, aggregate_trials
from cdga.training import (
    DEFAULT_SEARCH_SPACE,
    BenchmarkRun,
    TrainConfig,
    load_dataset_tensors,
    random_search,
    train,
)

ALGORITHM_LABELS = {
    "cdga_pg": "CDGA-PG",
    "cdga_ig": "CDGA-IG",
    "cdga_star_pg": "CDGA*-PG",
    "sdga_pg_label": "SDGA-PG-L",
    "sdga_pg_label_domain": "SDGA-PG-LD",
    "sdga_ig_label": "SDGA-IG-L",
}

STAGES = ("scan", "generate", "benchmark", "diagnose", "report")


class PipelineError(RuntimeError):
    """Fatal pipeline condition; maps to exit code 1."""


@dataclass
class StageOutcome:
    stage: str
    status: str  # ok | skipped | partial
    outputs: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def succeeded(self) -> bool:
        return self.status in ("ok", "skipped")


def _stable_seed(*parts) -> int:
    return zlib.crc32(":".join(str(p) for p in parts).encode()) & 0x7FFFFFFF


class Pipeline:
    def __init__(self, config: ExperimentConfig, backend=None, resume: bool = True):
        self.config = config
        self.out = Path(config.out_root)
        self.out.mkdir(parents=True, exist_ok=True)
        self.ledger = RunLedger(self.out / "ledger.jsonl")
        self.resume = resume
        self._backend = backend
        self._outcomes: dict[str, StageOutcome] = {}
        self._tensors_cache: dict[str, object] = {}

    # ------------------------------------------------------------------ hashes

    def scan_hash(self) -> str:
        return config_hash({"dataset_root": self.config.dataset_root})

    def generate_hash(self) -> str:
        cfg = self.config
        return config_hash(
            {
                "parent": self.scan_hash(),
                "targets": cfg.targets,
                "suite": cfg.suite,
                "descriptions": cfg.descriptions,
                "augmentation": cfg.augmentation,
                "backend": {"kind": cfg.backend["kind"], "params": cfg.backend["params"]},
            }
        )

    def benchmark_hash(self) -> str:
        return config_hash(
            {
                "parent": self.generate_hash(),
                "seed": self.config.seed,
                "benchmark": self.config.benchmark,
            }
        )

    def diagnose_hash(self) -> str:
        return config_hash(
            {
                "parent": self.generate_hash(),
                "seed": self.config.seed,
                "diagnostics": self.config.diagnostics,
            }
        )

    # ------------------------------------------------------------------ helpers

    def _backend_instance(self):
        if self._backend is None:
            self._backend = build_backend(
                self.config.backend["kind"], **self.config.backend["params"]
            )
        return self._backend

    def _augmented_root(self, target: str) -> Path:
        return self.out / "augmented" / target

    def _load_scan_manifest(self) -> DomainDatasetManifest:
        return load_manifest(self.out / "manifest.json")

    def _augmentation_mode(self, manifest: DomainDatasetManifest, target: str,
                           train_domains: list[str]) -> AugmentationMode:
        cfg = self.config
        batch = cfg.augmentation["batch_size"]
        if batch == "balanced":
            # Equalize cells using only the training domains' counts.
            counts = count_per_class_domain(manifest).counts.copy()
            train_idx = [manifest.domains.index(d) for d in train_domains]
            sub = CountTable(
                counts=counts[train_idx],
                domains=tuple(train_domains),
                classes=manifest.classes,
            )
            sub_b = balanced_batch_sizes(sub)
            full = np.zeros_like(counts)
            for row, di in enumerate(train_idx):
                full[di] = sub_b[row]
            batch = full
        target_description = None
        if self.config.mode_kind.uses_target_prompt:
            target_description = cfg.augmentation["target_descriptions"].get(target)
            if not target_description:
                raise PipelineError(
                    f"target-prompt generation needs a description for target {target!r}"
                )
        return AugmentationMode(
            kind=self.config.mode_kind,
            batch_size=batch,
            target_description=target_description,
        )

    def _tensors(self, key: str, manifest: DomainDatasetManifest):
        if key not in self._tensors_cache:
            self._tensors_cache[key] = load_dataset_tensors(
                manifest, image_size=int(self.config.benchmark["image_size"])
            )
        return self._tensors_cache[key]

    # ------------------------------------------------------------------ stages

    def stage_scan(self) -> StageOutcome:
        if "scan" in self._outcomes:
            return self._outcomes["scan"]
        h = self.scan_hash()
        outputs = {"manifest": "manifest.json"}
        if self.ledger.is_complete("scan", h):
            outcome = StageOutcome("scan", "skipped", outputs)
        else:
            manifest = scan_dataset(self.config.dataset_root)
            if not manifest.entries:
                raise PipelineError(f"dataset at {self.config.dataset_root} holds no images")
            save_manifest(manifest, self.out / "manifest.json")
            self.ledger.record(
                "scan", h, ["manifest.json"], extra={"warnings": list(manifest.warnings)}
            )
            outcome = StageOutcome(
                "scan", "ok", outputs, {"warnings": list(manifest.warnings)}
            )
        self._outcomes["scan"] = outcome
        return outcome

    def stage_generate(self) -> StageOutcome:
        if "generate" in self._outcomes:
            return self._outcomes["generate"]
        self.stage_scan()
        cfg = self.config
        h = self.generate_hash()
        outputs = {
            t: str(Path("augmented") / t / "manifest.json") for t in cfg.targets
        }
        if self.ledger.is_complete("generate", h):
            outcome = StageOutcome("generate", "skipped", outputs)
            self._outcomes["generate"] = outcome
            return outcome

        manifest = self._load_scan_manifest()
        unknown = [t for t in cfg.targets if t not in manifest.domains]
        if unknown:
            raise PipelineError(f"target domains not in dataset: {unknown}")
        backend = self._backend_instance()
        descriptions = cfg.domain_descriptions()
        reports = {}
        failed_targets = []
        for target in cfg.targets:
            train_domains = [d for d in manifest.domains if d != target]
            mode = self._augmentation_mode(manifest, target, train_domains)
            plan = plan_augmentation(
                manifest,
                train_domains,
                mode,
                descriptions=descriptions,
                seed=int(cfg.augmentation["seed"]),
            )
            work_dir = self.out / "gen_work" / target
            if not self.resume:
                # A fresh (non-resumed) run discards partial progress.
                shutil.rmtree(work_dir, ignore_errors=True)
                shutil.rmtree(self._augmented_root(target), ignore_errors=True)
            result = execute_plan(
                plan,
                backend,
                work_dir,
                workers=int(cfg.backend["workers"]),
                max_retries=int(cfg.backend["max_retries"]),
                resume=True,
            )
            report_payload = {**result.report(), "config_hash": h}
            report_path = self.out / "reports" / f"generation_{target}.json"
            report_path.parent.mkdir(parents=True, exist_ok=True)
            report_path.write_text(
                json.dumps(report_payload, indent=2, sort_keys=True) + "\n"
            )
            reports[target] = report_payload
            if result.failures:
                failed_targets.append(target)
                continue
            aug_root = self._augmented_root(target)
            augmented = materialize_augmented_dataset(
                manifest,
                result.records,
                self.out / "gen_work" / target,
                aug_root,
                resume=True,
            )
            save_manifest(augmented, aug_root / "manifest.json")

        if failed_targets:
            outcome = StageOutcome(
                "generate",
                "partial",
                outputs,
                {"failed_targets": failed_targets, "reports": reports},
            )
        else:
            self.ledger.record(
                "generate",
                h,
                sorted(outputs.values()),
                parents=[self.scan_hash()],
                extra={"tasks": {t: r["tasks_done"] for t, r in reports.items()}},
            )
            outcome = StageOutcome("generate", "ok", outputs, {"reports": reports})
        self._outcomes["generate"] = outcome
        return outcome

    # -- benchmark ------------------------------------------------------------

    def _search_space(self) -> dict:
        space = {k: dict(v) for k, v in DEFAULT_SEARCH_SPACE.items()}
        space["steps"] = {"const": int(self.config.benchmark["steps"])}
        for name, spec in self.config.benchmark["space"].items():
            space[name] = dict(spec)
        return space

    def _algorithms(self) -> dict[str, str]:
        """Mapping of algorithm key ('erm'/'augmented') to its table label."""
        labels = {}
        for algo in self.config.benchmark["algorithms"]:
            if algo == "erm":
                labels["erm"] = "ERM"
            else:
                labels["augmented"] = ALGORITHM_LABELS[self.config.mode_kind.value]
        return labels

    def stage_benchmark(self) -> StageOutcome:
        if "benchmark" in self._outcomes:
            return self._outcomes["benchmark"]
        gen_outcome = self.stage_generate()
        cfg = self.config
        h = self.benchmark_hash()
        rules = list(cfg.benchmark["selection_rules"])
        outputs = {f"table_{r}": str(Path("tables") / f"{r}.csv") for r in rules}
        outputs["runs"] = "runs/index.json"
        if self.ledger.is_complete("benchmark", h):
            outcome = StageOutcome("benchmark", "skipped", outputs)
            self._outcomes["benchmark"] = outcome
            return outcome

        manifest = self._load_scan_manifest()
        model_cfg = dict(cfg.benchmark["model"])
        model_spec = ModelSpec(
            architecture=model_cfg.get("architecture", "small_cnn"),
            width=int(model_cfg.get("width", 8)),
            pretrained=bool(model_cfg.get("pretrained", False)),
        )
        space = self._search_space()
        labels = self._algorithms()
        need_loo = "leave_one_out" in rules

        runs_by_cell: dict[tuple[str, str, int], list[BenchmarkRun]] = {}
        all_runs: list[BenchmarkRun] = []
        missing: list[str] = []
        for target in cfg.targets:
            train_domains = tuple(d for d in manifest.domains if d != target)
            for algo, label in labels.items():
                if algo == "erm":
                    data_manifest, tensors_key = manifest, "scan"
                else:
                    aug_manifest_path = self._augmented_root(target) / "manifest.json"
                    if not aug_manifest_path.is_file():
                        missing.append(f"{label}@{target}: augmented dataset unavailable")
                        continue
                    data_manifest = load_manifest(aug_manifest_path)
                    tensors_key = f"augmented/{target}"
                tensors = self._tensors(tensors_key, data_manifest)
                base = TrainConfig(
                    model=model_spec,
                    hparams={},
                    seed=0,
                    target_domain=target,
                    train_domains=train_domains,
                    image_size=int(cfg.benchmark["image_size"]),
                    checkpoint_every=int(cfg.benchmark["checkpoint_every"]),
                    algorithm=label,
                )
                configs = random_search(
                    space,
                    int(cfg.benchmark["n_hparams"]),
                    int(cfg.benchmark["n_trials"]),
                    _stable_seed(cfg.seed, algo, target),
                    base,
                )
                for run_cfg in configs:
                    cell = (label, target, run_cfg.trial_index)
                    run = train(run_cfg, tensors=tensors)
                    all_runs.append(run)
                    runs_by_cell.setdefault(cell, []).append(run)
                    if need_loo and len(train_domains) >= 2:
                        for holdout in train_domains:
                            held_run = train(
                                replace(run_cfg, holdout_domain=holdout), tensors=tensors
                            )
                            all_runs.append(held_run)
                            runs_by_cell.setdefault(cell, []).append(held_run)

        runs_dir = self.out / "runs"
        runs_dir.mkdir(parents=True, exist_ok=True)
        run_files = []
        for i, run in enumerate(all_runs):
            name = f"run_{i:04d}.json"
            payload = {**run.to_json(), "config_hash": h}
            (runs_dir / name).write_text(
                json.dumps(payload, indent=2, sort_keys=True) + "\n"
            )
            run_files.append(name)
        (runs_dir / "index.json").write_text(
            json.dumps({"config_hash": h, "runs": run_files}, indent=2, sort_keys=True)
            + "\n"
        )
        tables: dict[str, ResultTable] = {}
        for rule in rules:
            table = aggregate_trials(rule, cfg.targets, runs_by_cell)
            for label in labels.values():
                if label not in table.algorithms:
                    table.algorithms = table.algorithms + (label,)
            table.to_csv(self.out / "tables" / f"{rule}.csv")
            (self.out / "tables" / f"{rule}.txt").write_text(table.render_text())
            tables[rule] = table

        incomplete = missing or any(not t.complete for t in tables.values())
        details = {"missing": missing, "n_runs": len(all_runs)}
        if incomplete or not gen_outcome.succeeded:
            outcome = StageOutcome("benchmark", "partial", outputs, details)
        else:
            self.ledger.record(
                "benchmark",
                h,
                sorted(outputs.values()),
                parents=[self.generate_hash()],
                extra={"n_runs": len(all_runs)},
            )
            outcome = StageOutcome("benchmark", "ok", outputs, details)
        self._outcomes["benchmark"] = outcome
        return outcome

    # -- diagnose ---------------------------------------------------------------

    def _embed_domains(self, manifest, encoder, cap: int, only=None):
        from cdga.diagnostics.embeddings import embed_images

        by_domain: dict[str, dict[str, Path]] = {}
        for entry in manifest.entries:
            domain = manifest.domains[entry.domain_index]
            if only is not None and domain not in only:
                continue
            paths = by_domain.setdefault(domain, {})
            if len(paths) < cap:
                paths[entry.entry_id] = manifest.path_of(entry)
        return {d: embed_images(paths, encoder) for d, paths in sorted(by_domain.items())}

    def _diag_runs(self, manifest, target, train_domains):
        cfg = self.config
        diag = cfg.diagnostics
        results = {}
        labels = self._algorithms()
        default_hp = {
            name: spec.get("const", spec.get("default"))
            for name, spec in self._search_space().items()
        }
        default_hp["steps"] = int(diag["steps"])
        for algo, label in labels.items():
            if algo == "erm":
                data_manifest, key = manifest, "scan"
            else:
                path = self._augmented_root(target) / "manifest.json"
                if not path.is_file():
                    continue
                data_manifest, key = load_manifest(path), f"augmented/{target}"
            run_cfg = TrainConfig(
                model=ModelSpec(**cfg.benchmark["model"]),
                hparams=default_hp,
                seed=cfg.seed,
                target_domain=target,
                train_domains=tuple(train_domains),
                image_size=int(cfg.benchmark["image_size"]),
                checkpoint_every=int(diag["checkpoint_every"]),
                algorithm=label,
            )
            run = train(run_cfg, tensors=self._tensors(key, data_manifest),
                        capture_states=True)
            results[label] = (run, self._tensors(key, data_manifest))
        return results

    def stage_diagnose(self) -> StageOutcome:
        if "diagnose" in self._outcomes:
            return self._outcomes["diagnose"]
        self.stage_generate()
        from cdga.diagnostics.attacks import robustness_curve
        from cdga.diagnostics.diversity import diversity_shift
        from cdga.diagnostics.embeddings import CLIPEncoder, PixelStatEncoder
        from cdga.diagnostics.hessian import classifier_head_hessian, hessian_distance
        from cdga.diagnostics.neardup import near_duplicate_rates
        from cdga.diagnostics.projection import (
            plot_projection,
            tsne_views,
            write_projection_csv,
        )
        from cdga.diagnostics.report import (
            DiagnosticReport,
            plot_bars,
            plot_near_duplicate_heatmap,
            plot_series,
        )
        from cdga.diagnostics.sharpness import SharpnessTrace, sharpness

        cfg = self.config
        diag = cfg.diagnostics
        h = self.diagnose_hash()
        diag_dir = self.out / "diagnostics"
        outputs = {"report": "diagnostics/report.json"}
        if self.ledger.is_complete("diagnose", h):
            outcome = StageOutcome("diagnose", "skipped", outputs)
            self._outcomes["diagnose"] = outcome
            return outcome

        manifest = self._load_scan_manifest()
        target = diag["target"] or cfg.targets[0]
        if target not in manifest.domains:
            raise PipelineError(f"diagnostics target {target!r} not in dataset")
        train_domains = [d for d in manifest.domains if d != target]
        sections = set(diag["sections"])
        report = DiagnosticReport(config_hash=h)
        diag_dir.mkdir(parents=True, exist_ok=True)

        encoder = (
            CLIPEncoder() if diag["encoder"] == "clip" else PixelStatEncoder()
        )
        cap = int(diag["max_images_per_domain"])
        aug_manifest_path = self._augmented_root(target) / "manifest.json"
        aug_manifest = (
            load_manifest(aug_manifest_path) if aug_manifest_path.is_file() else None
        )

        origin_embeds = self._embed_domains(manifest, encoder, cap)
        gen_embeds = {}
        if aug_manifest is not None:
            gen_domains = [
                d for d in aug_manifest.domains if parse_generated_domain(d) is not None
            ]
            gen_embeds = self._embed_domains(aug_manifest, encoder, cap, only=gen_domains)

        # Near-duplicate rates between originals and generated images.
        if "near_dup" not in sections:
            report.skip_section("near_dup", "disabled in config")
        elif not gen_embeds:
            report.skip_section("near_dup", "no generated images available")
        else:
            result = near_duplicate_rates(
                origin_embeds, gen_embeds, threshold=float(diag["near_dup_threshold"])
            )
            plot_near_duplicate_heatmap(result, diag_dir / "near_duplicates.png")
            report.add_section("near_dup", result.to_json())
            report.add_artifact("near_dup_plot", "near_duplicates.png")

        # Per-class 2-D projections of original + generated embeddings.
        if "tsne" not in sections:
            report.skip_section("tsne", "disabled in config")
        else:
            vectors, ids, class_labels, origin_labels = [], [], [], []
            for domain, matrix in {**origin_embeds, **gen_embeds}.items():
                for row, eid in zip(matrix.vectors, matrix.ids):
                    vectors.append(row)
                    ids.append(eid)
                    class_labels.append(eid.split("/")[1])
                    origin_labels.append(domain)
            views = tsne_views(
                np.asarray(vectors),
                ids,
                class_labels,
                origin_labels,
                per_class=bool(diag["tsne_per_class"]),
                seed=cfg.seed,
            )
            view_meta = {}
            for name, points in views.items():
                write_projection_csv(points, diag_dir / f"tsne_{name}.csv")
                plot_projection(points, diag_dir / f"tsne_{name}.png", title=name)
                view_meta[name] = {
                    "n_points": len(points.ids),
                    "csv": f"tsne_{name}.csv",
                    "png": f"tsne_{name}.png",
                }
                report.add_artifact(f"tsne_{name}", f"tsne_{name}.png")
            report.add_section("tsne", {"views": view_meta})

        needs_models = sections & {"hessian_trace", "robustness", "sharpness"}
        diag_runs = self._diag_runs(manifest, target, train_domains) if needs_models else {}
        image_size = int(cfg.benchmark["image_size"])

        def domain_slice(tensors, domain, limit=64):
            idx = [i for i, d in enumerate(tensors.domains) if d == domain][:limit]
            return tensors.images[idx], tensors.labels[idx]

        # Hessian transfer distance between training domains and the target.
        if "hessian_trace" not in sections:
            report.skip_section("hessian_trace", "disabled in config")
        elif not diag_runs:
            report.skip_section("hessian_trace", "no diagnostic runs available")
        else:
            entries = []
            series = {}
            for label, (run, tensors) in diag_runs.items():
                model = build_model(run.config.model, len(tensors.classes), image_size)
                pairs: dict[str, dict] = {}
                for ckpt in run.checkpoints:
                    model.load_state_dict(ckpt.state)
                    tx, _ = domain_slice(tensors, target)
                    h_target = classifier_head_hessian(model, tx, domain=target,
                                                       step=ckpt.step)
                    for domain in train_domains:
                        dx, _ = domain_slice(tensors, domain)
                        h_domain = classifier_head_hessian(model, dx, domain=domain,
                                                           step=ckpt.step)
                        pair = f"{domain}->{target}"
                        distance = hessian_distance(h_domain, h_target)
                        entries.append(
                            {
                                "algorithm": label,
                                "step": ckpt.step,
                                "pair": pair,
                                "distance": distance,
                            }
                        )
                        trace = pairs.setdefault(pair, {"steps": [], "values": []})
                        trace["steps"].append(ckpt.step)
                        trace["values"].append(distance)
                for pair, trace in pairs.items():
                    series[f"{label} {pair}"] = (trace["steps"], trace["values"])
            plot_series(series, diag_dir / "hessian_distance.png", xlabel="step",
                        ylabel="||H_domain - H_target||_2", title="Hessian transfer distance")
            report.add_section("hessian_trace", {"entries": entries})
            report.add_artifact("hessian_trace_plot", "hessian_distance.png")

        # Diversity shift of each training domain (raw and augmented) vs target.
        if "diversity" not in sections:
            report.skip_section("diversity", "disabled in config")
        else:
            bins = int(diag["bins"])
            entries = []
            skipped = []
            target_vecs = origin_embeds[target].vectors

            def add_shift(pair: str, vectors) -> None:
                entries.append(
                    {
                        "pair": pair,
                        "value": diversity_shift(vectors, target_vecs, bins=bins),
                        "bins": bins,
                    }
                )

            for domain in train_domains:
                try:
                    add_shift(f"{domain} vs {target}", origin_embeds[domain].vectors)
                except ValueError as exc:
                    skipped.append(f"{domain}: {exc}")
                    continue
                group_gen = [
                    m.vectors
                    for d, m in gen_embeds.items()
                    if parse_generated_domain(d)[0] == domain
                ]
                if group_gen:
                    pooled = np.concatenate([origin_embeds[domain].vectors, *group_gen])
                    add_shift(f"{domain}+gen vs {target}", pooled)
            if entries:
                plot_bars({e["pair"]: e["value"] for e in entries},
                          diag_dir / "diversity_shift.png",
                          ylabel="diversity shift (TV)")
                report.add_section("diversity", {"entries": entries, "skipped": skipped})
                report.add_artifact("diversity_plot", "diversity_shift.png")
            else:
                report.skip_section("diversity", "; ".join(skipped) or "no data")

        # Adversarial robustness of the final models on target images.
        if "robustness" not in sections:
            report.skip_section("robustness", "disabled in config")
        elif not diag_runs:
            report.skip_section("robustness", "no diagnostic runs available")
        else:
            data = {}
            fgsm_series, pgd_series = {}, {}
            for label, (run, tensors) in diag_runs.items():
                model = build_model(run.config.model, len(tensors.classes), image_size)
                model.load_state_dict(run.checkpoints[-1].state)
                tx, ty = domain_slice(tensors, target)
                fgsm_curve = robustness_curve(
                    model, tx, ty, attack="fgsm", grid=tuple(diag["fgsm_grid"])
                )
                pgd_curve = robustness_curve(
                    model,
                    tx,
                    ty,
                    attack="pgd",
                    grid=tuple(diag["pgd_iters"]),
                    rho=float(diag["pgd_rho"]),
                )
                data[label] = {"fgsm": fgsm_curve.to_json(), "pgd": pgd_curve.to_json()}
                fgsm_series[label] = (fgsm_curve.grid, fgsm_curve.accuracies)
                pgd_series[label] = (pgd_curve.grid, pgd_curve.accuracies)
            plot_series(fgsm_series, diag_dir / "robustness_fgsm.png",
                        xlabel="rho", ylabel="accuracy", title="FGSM robustness", logx=True)
            plot_series(pgd_series, diag_dir / "robustness_pgd.png",
                        xlabel="iterations", ylabel="accuracy",
                        title=f"PGD robustness at rho={diag['pgd_rho']}")
            report.add_section("robustness", {"curves": data})
            report.add_artifact("robustness_fgsm_plot", "robustness_fgsm.png")
            report.add_artifact("robustness_pgd_plot", "robustness_pgd.png")

        # Sharpness of the loss along each training trajectory.
        if "sharpness" not in sections:
            report.skip_section("sharpness", "disabled in config")
        elif not diag_runs:
            report.skip_section("sharpness", "no diagnostic runs available")
        else:
            rho = float(diag["sharpness_rho"])
            data = {}
            series = {}
            for label, (run, tensors) in diag_runs.items():
                model = build_model(run.config.model, len(tensors.classes), image_size)
                train_mask = [
                    i
                    for i, d in enumerate(tensors.groups)
                    if d in train_domains
                ][:96]
                bx, by = tensors.images[train_mask], tensors.labels[train_mask]
                steps, values = [], []
                for ckpt in run.checkpoints:
                    model.load_state_dict(ckpt.state)
                    steps.append(ckpt.step)
                    values.append(sharpness(model, bx, by, rho, seed=cfg.seed))
                trace = SharpnessTrace(steps=tuple(steps), values=tuple(values), rho=rho)
                data[label] = trace.to_json()
                series[label] = (steps, values)
            plot_series(series, diag_dir / "sharpness.png", xlabel="step",
                        ylabel=f"sharpness (rho={rho})", title="Loss sharpness")
            report.add_section("sharpness", {"traces": data})
            report.add_artifact("sharpness_plot", "sharpness.png")

        report.save(diag_dir / "report.json")
        skipped_sections = [
            name
            for name, body in report.sections.items()
            if body["status"] == "skipped" and name in sections
        ]
        if skipped_sections:
            outcome = StageOutcome(
                "diagnose", "partial", outputs, {"skipped": skipped_sections}
            )
        else:
            self.ledger.record(
                "diagnose",
                h,
                ["diagnostics/report.json"],
                parents=[self.generate_hash()],
            )
            outcome = StageOutcome("diagnose", "ok", outputs)
        self._outcomes["diagnose"] = outcome
        return outcome

    def stage_report(self) -> StageOutcome:
        if "report" in self._outcomes:
            return self._outcomes["report"]
        self.stage_benchmark()
        self.stage_diagnose()
        cfg = self.config
        lines = ["# Experiment summary", ""]
        summary: dict = {"config_hash": self.benchmark_hash(), "artifacts": {}}
        missing = []

        def note(name: str, rel: str) -> None:
            if (self.out / rel).exists():
                summary["artifacts"][name] = rel
                lines.append(f"- {name}: `{rel}`")
            else:
                missing.append(name)

        note("manifest", "manifest.json")
        for target in cfg.targets:
            note(f"augmented_{target}", f"augmented/{target}/manifest.json")
            note(f"generation_report_{target}", f"reports/generation_{target}.json")
        for rule in cfg.benchmark["selection_rules"]:
            note(f"table_{rule}", f"tables/{rule}.csv")
            table_txt = self.out / "tables" / f"{rule}.txt"
            if table_txt.is_file():
                lines.extend(["", "```", table_txt.read_text().rstrip(), "```"])
        note("diagnostics", "diagnostics/report.json")
        if missing:
            lines.extend(["", "Missing artifacts: " + ", ".join(sorted(missing))])
        summary["missing"] = sorted(missing)
        (self.out / "summary.md").write_text("\n".join(lines) + "\n")
        (self.out / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n"
        )
        status = "partial" if missing else "ok"
        outcome = StageOutcome(
            "report",
            status,
            {"summary": "summary.md", "summary_json": "summary.json"},
            {"missing": sorted(missing)},
        )
        self._outcomes["report"] = outcome
        return outcome

    def run(self, stages: list[str]) -> tuple[int, list[StageOutcome]]:
        """Execute the requested stages in canonical order; 0 = all ok or
        skipped, 2 = partial results."""
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise PipelineError(f"unknown stages: {unknown}")
        ordered = [s for s in STAGES if s in stages]
        outcomes = []
        for stage in ordered:
            outcomes.append(getattr(self, f"stage_{stage}")())
        code = 0 if all(o.succeeded for o in outcomes) else 2
        return code, outcomes
