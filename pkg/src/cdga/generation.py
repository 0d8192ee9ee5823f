"""Generation planning, execution, and dataset materialization.

A plan enumerates one task per (source image, guidance domain) pair; each
task asks the backend for ``b`` images (the generation batch size).  The
target-prompt rule appends exactly one extra task per source image aimed
at the held-out target's style.  Execution is resumable at (task, slot)
granularity: completed slots are checkpointed to a JSONL file in the work
directory and skipped on re-execution.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from PIL import Image

from cdga.backends import (
    BackendError,
    DEFAULT_PARAMS,
    GenerationRequest,
    LDMBackend,
    MODE_IMAGE_MIX,
    MODE_IMG2IMG,
    MODE_TXT2IMG,
    check_capability,
)
from cdga.dataset import (
    AugmentationKind,
    AugmentationMode,
    DomainDatasetManifest,
    TARGET_TOKEN,
    generated_domain_name,
    scan_dataset,
)
from cdga.prompts import build_prompt

import numpy as np

CHECKPOINT_NAME = "completed.jsonl"


class PlanError(ValueError):
    """A generation plan cannot be built from the given inputs."""


@dataclass(frozen=True)
class GuidanceSpec:
    """How one task steers the backend: a prompt, or a concrete image.

    Prompt guidance carries the composed prompt text and no guidance
    entry; image guidance names the entry to mix in and may still carry
    a label prompt.
    """

    kind: str
    guidance_domain: str
    prompt_text: str | None = None
    guidance_entry: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("prompt", "image"):
            raise ValueError(f"unknown guidance kind: {self.kind!r}")
        if self.kind == "prompt":
            if not self.prompt_text:
                raise ValueError("prompt guidance requires prompt text")
            if self.guidance_entry is not None:
                raise ValueError("prompt guidance cannot carry a guidance image")
        elif self.guidance_entry is None:
            raise ValueError("image guidance requires a guidance entry")


@dataclass(frozen=True)
class GenerationTask:
    """All inputs for one backend call batch."""

    index: int
    source_entry: str
    source_domain: str
    class_name: str
    batch_size: int
    request_mode: str
    guidance: GuidanceSpec
    seed: int

    @property
    def guidance_domain(self) -> str:
        return self.guidance.guidance_domain

    @property
    def prompt(self) -> str | None:
        return self.guidance.prompt_text

    @property
    def guidance_entry(self) -> str | None:
        return self.guidance.guidance_entry

    @property
    def task_id(self) -> str:
        return f"{self.source_entry}=>{self.guidance_domain}"


@dataclass(frozen=True)
class GenerationPlan:
    mode: AugmentationMode
    manifest: DomainDatasetManifest
    train_domains: tuple[str, ...]
    tasks: tuple[GenerationTask, ...]
    seed: int
    warnings: tuple[str, ...] = ()

    @property
    def expected_records(self) -> int:
        return sum(t.batch_size for t in self.tasks)

    def request_modes(self) -> frozenset[str]:
        return frozenset(t.request_mode for t in self.tasks)


@dataclass(frozen=True)
class SyntheticRecord:
    """One generated image, staged in the work directory."""

    task_id: str
    slot: int
    source_entry: str
    source_domain: str
    guidance_domain: str
    class_name: str
    prompt: str | None
    path: str
    params: tuple[tuple[str, float | int], ...] = ()

    @property
    def record_id(self) -> str:
        return f"{self.task_id}#s{self.slot}"

    def to_json(self) -> dict:
        return {
            "task_id": self.task_id,
            "slot": self.slot,
            "source_entry": self.source_entry,
            "source_domain": self.source_domain,
            "guidance_domain": self.guidance_domain,
            "class": self.class_name,
            "prompt": self.prompt,
            "path": self.path,
            "params": dict(self.params),
        }

    @staticmethod
    def from_json(payload: dict) -> "SyntheticRecord":
        return SyntheticRecord(
            task_id=payload["task_id"],
            slot=payload["slot"],
            source_entry=payload["source_entry"],
            source_domain=payload["source_domain"],
            guidance_domain=payload["guidance_domain"],
            class_name=payload["class"],
            prompt=payload.get("prompt"),
            path=payload["path"],
            params=tuple(sorted(payload.get("params", {}).items())),
        )


@dataclass
class ExecutionResult:
    records: list[SyntheticRecord]
    failures: list[dict]
    backend_calls: int
    wall_time: float
    tasks_total: int
    tasks_done: int

    @property
    def status(self) -> str:
        return "ok" if not self.failures else "partial"

    def report(self) -> dict:
        # Persisted payload: must stay deterministic for a fixed plan, so
        # wall_time (available on the result itself) is excluded.
        return {
            "tasks_total": self.tasks_total,
            "tasks_done": self.tasks_done,
            "failures": self.failures,
        }


def _task_seed(plan_seed: int, task_key: str) -> int:
    digest = hashlib.sha256(f"{plan_seed}:{task_key}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _ordered_train_domains(
    manifest: DomainDatasetManifest, train_domains: Sequence[str]
) -> tuple[str, ...]:
    if not train_domains:
        raise PlanError("at least one training domain is required")
    unknown = [d for d in train_domains if d not in manifest.domains]
    if unknown:
        raise PlanError(f"unknown training domains: {unknown}")
    if len(set(train_domains)) != len(train_domains):
        raise PlanError("training domains must be unique")
    return tuple(sorted(train_domains, key=manifest.domains.index))


def _require_descriptions(domains: Sequence[str], descriptions: dict[str, str] | None) -> dict:
    descriptions = descriptions or {}
    missing = [d for d in domains if not descriptions.get(d)]
    if missing:
        raise PlanError(f"prompt guidance requires a description for every domain; missing: {missing}")
    return descriptions


def _check_batch(mode: AugmentationMode, manifest: DomainDatasetManifest, di: int, ci: int) -> int:
    b = mode.batch_for(di, ci)
    if b < 1:
        raise PlanError(
            f"batch size table has {b} for populated cell "
            f"({manifest.domains[di]}, {manifest.classes[ci]})"
        )
    return b


def plan_cdga(
    manifest: DomainDatasetManifest,
    train_domains: Sequence[str],
    mode: AugmentationMode,
    descriptions: dict[str, str] | None = None,
    seed: int = 0,
) -> GenerationPlan:
    """Cross-domain plan: every training image paired with every training
    domain's guidance (own domain included).

    Prompt guidance composes "a <class>, <description of j>"; image
    guidance draws a same-class image from domain j uniformly at random
    (seeded, so planning is reproducible).  Cells with no same-class
    guidance candidates are skipped with a warning.  The target-prompt
    variant adds one extra single-image task per entry using the mode's
    target description.
    """
    if not mode.kind.is_cross_domain:
        raise PlanError(f"plan_cdga expects a cross-domain mode, got {mode.kind.value}")
    ordered = _ordered_train_domains(manifest, train_domains)
    if mode.kind.guidance == "prompt":
        descriptions = _require_descriptions(ordered, descriptions)

    rng = np.random.default_rng(seed)
    guidance_pools: dict[tuple[str, int], list[str]] = {}
    if mode.kind.guidance == "image":
        for dom in ordered:
            di = manifest.domains.index(dom)
            for e in manifest.entries:
                if e.domain_index == di:
                    guidance_pools.setdefault((dom, e.class_index), []).append(e.entry_id)

    tasks: list[GenerationTask] = []
    warnings: list[str] = []
    train_set = set(ordered)
    for entry in manifest.entries:
        src_domain = manifest.domains[entry.domain_index]
        if src_domain not in train_set:
            continue
        class_name = manifest.classes[entry.class_index]
        b = _check_batch(mode, manifest, entry.domain_index, entry.class_index)
        for gdomain in ordered:
            if mode.kind.guidance == "prompt":
                spec = GuidanceSpec(
                    kind="prompt",
                    guidance_domain=gdomain,
                    prompt_text=build_prompt(class_name, descriptions[gdomain]),
                )
                request_mode = MODE_IMG2IMG
            else:
                pool = guidance_pools.get((gdomain, entry.class_index), [])
                if not pool:
                    warnings.append(
                        f"no {class_name!r} guidance images in {gdomain}; "
                        f"skipping {entry.entry_id}=>{gdomain}"
                    )
                    continue
                spec = GuidanceSpec(
                    kind="image",
                    guidance_domain=gdomain,
                    guidance_entry=pool[int(rng.integers(len(pool)))],
                )
                request_mode = MODE_IMAGE_MIX
            tasks.append(
                GenerationTask(
                    index=len(tasks),
                    source_entry=entry.entry_id,
                    source_domain=src_domain,
                    class_name=class_name,
                    batch_size=b,
                    request_mode=request_mode,
                    guidance=spec,
                    seed=_task_seed(seed, f"{entry.entry_id}=>{gdomain}"),
                )
            )
        if mode.kind.uses_target_prompt:
            # One target-styled image per entry by default; the full-batch
            # variant generates b of them instead.
            tasks.append(
                GenerationTask(
                    index=len(tasks),
                    source_entry=entry.entry_id,
                    source_domain=src_domain,
                    class_name=class_name,
                    batch_size=b if mode.target_full_batch else 1,
                    request_mode=MODE_IMG2IMG,
                    guidance=GuidanceSpec(
                        kind="prompt",
                        guidance_domain=TARGET_TOKEN,
                        prompt_text=build_prompt(class_name, mode.target_description),
                    ),
                    seed=_task_seed(seed, f"{entry.entry_id}=>{TARGET_TOKEN}"),
                )
            )
    return GenerationPlan(
        mode=mode,
        manifest=manifest,
        train_domains=ordered,
        tasks=tuple(tasks),
        seed=seed,
        warnings=tuple(warnings),
    )


def plan_sdga(
    manifest: DomainDatasetManifest,
    train_domains: Sequence[str],
    mode: AugmentationMode,
    descriptions: dict[str, str] | None = None,
    seed: int = 0,
) -> GenerationPlan:
    """Same-domain plan: one task per training image, guided by its own
    label (and optionally own-domain description, or the image itself)."""
    if mode.kind.is_cross_domain:
        raise PlanError(f"plan_sdga expects a same-domain mode, got {mode.kind.value}")
    ordered = _ordered_train_domains(manifest, train_domains)
    if mode.kind is AugmentationKind.SDGA_PG_LABEL_DOMAIN:
        descriptions = _require_descriptions(ordered, descriptions)

    tasks: list[GenerationTask] = []
    train_set = set(ordered)
    for entry in manifest.entries:
        src_domain = manifest.domains[entry.domain_index]
        if src_domain not in train_set:
            continue
        class_name = manifest.classes[entry.class_index]
        b = _check_batch(mode, manifest, entry.domain_index, entry.class_index)
        if mode.kind is AugmentationKind.SDGA_PG_LABEL:
            spec = GuidanceSpec(
                kind="prompt", guidance_domain=src_domain, prompt_text=build_prompt(class_name)
            )
            request_mode = MODE_TXT2IMG
        elif mode.kind is AugmentationKind.SDGA_PG_LABEL_DOMAIN:
            spec = GuidanceSpec(
                kind="prompt",
                guidance_domain=src_domain,
                prompt_text=build_prompt(class_name, descriptions[src_domain]),
            )
            request_mode = MODE_TXT2IMG
        else:  # SDGA_IG_LABEL: the guidance is the image itself plus its label
            spec = GuidanceSpec(
                kind="image",
                guidance_domain=src_domain,
                prompt_text=build_prompt(class_name),
                guidance_entry=entry.entry_id,
            )
            request_mode = MODE_IMAGE_MIX
        tasks.append(
            GenerationTask(
                index=len(tasks),
                source_entry=entry.entry_id,
                source_domain=src_domain,
                class_name=class_name,
                batch_size=b,
                request_mode=request_mode,
                guidance=spec,
                seed=_task_seed(seed, f"{entry.entry_id}=>{src_domain}"),
            )
        )
    return GenerationPlan(
        mode=mode,
        manifest=manifest,
        train_domains=ordered,
        tasks=tuple(tasks),
        seed=seed,
    )


def plan_augmentation(
    manifest: DomainDatasetManifest,
    train_domains: Sequence[str],
    mode: AugmentationMode,
    descriptions: dict[str, str] | None = None,
    seed: int = 0,
) -> GenerationPlan:
    if mode.kind.is_cross_domain:
        return plan_cdga(manifest, train_domains, mode, descriptions, seed)
    return plan_sdga(manifest, train_domains, mode, descriptions, seed)


def _staged_path(images_dir: Path, task: GenerationTask, slot: int) -> Path:
    stem = task.source_entry.rsplit("/", 1)[-1]
    return images_dir / f"{task.index:06d}_{stem}__s{slot}.png"


def _load_checkpoint(work_dir: Path) -> dict[tuple[str, int], SyntheticRecord]:
    done: dict[tuple[str, int], SyntheticRecord] = {}
    ckpt = work_dir / CHECKPOINT_NAME
    if not ckpt.is_file():
        return done
    for line in ckpt.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        rec = SyntheticRecord.from_json(json.loads(line))
        if (work_dir / rec.path).is_file():
            done[(rec.task_id, rec.slot)] = rec
    return done


def execute_plan(
    plan: GenerationPlan,
    backend: LDMBackend,
    work_dir: str | Path,
    *,
    workers: int = 1,
    max_retries: int = 1,
    resume: bool = True,
    params: dict | None = None,
) -> ExecutionResult:
    """Run every task not already checkpointed; returns all records
    (previously completed ones included) plus per-task failures.

    Backend capability is checked against the whole plan before the first
    call.  Each task issues one backend call covering exactly its missing
    slots, so re-execution after an interruption performs one call per
    unfinished task and zero calls when everything is finished.  Transient
    failures are retried up to ``max_retries`` extra attempts; a task that
    still fails is reported in ``failures`` and execution continues.
    """
    work_dir = Path(work_dir)
    images_dir = work_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    for mode in sorted(plan.request_modes()):
        check_capability(backend, mode)

    base_params = {**DEFAULT_PARAMS, **(params or {})}
    # A checkpointed record only counts when it was produced for this plan
    # with these parameters; anything else (stale seed, other plan sharing
    # the work dir) is regenerated.
    expected = {
        t.task_id: tuple(sorted({**base_params, "seed": t.seed}.items()))
        for t in plan.tasks
    }
    completed = {
        key: rec
        for key, rec in (_load_checkpoint(work_dir) if resume else {}).items()
        if expected.get(key[0]) == rec.params
    }
    ckpt_path = work_dir / CHECKPOINT_NAME
    lock = threading.Lock()
    new_records: list[SyntheticRecord] = []
    failures: list[dict] = []
    calls = 0

    def run_task(task: GenerationTask) -> None:
        nonlocal calls
        missing = [s for s in range(task.batch_size) if (task.task_id, s) not in completed]
        if not missing:
            return
        source = None
        if task.request_mode != MODE_TXT2IMG:
            source = Image.open(
                plan.manifest.path_of(plan.manifest.entry(task.source_entry))
            ).convert("RGB")
        guidance = None
        if task.guidance_entry is not None:
            guidance = Image.open(
                plan.manifest.path_of(plan.manifest.entry(task.guidance_entry))
            ).convert("RGB")
        task_params = {**base_params, "seed": task.seed}
        request = GenerationRequest(
            mode=task.request_mode,
            prompt=task.prompt,
            source_image=source,
            guidance_image=guidance,
            params=task_params,
            count=len(missing),
            slots=tuple(missing),
        )
        response = None
        last_error: Exception | None = None
        for _ in range(max_retries + 1):
            with lock:
                calls += 1
            try:
                response = backend.generate(request)
                break
            except BackendError as exc:
                last_error = exc
        if response is None:
            with lock:
                failures.append({"task": task.task_id, "reason": str(last_error)})
            return
        if len(response.images) != len(missing):
            with lock:
                failures.append(
                    {
                        "task": task.task_id,
                        "reason": f"backend returned {len(response.images)} images, "
                        f"expected {len(missing)}",
                    }
                )
            return
        for slot, image in zip(missing, response.images):
            dest = _staged_path(images_dir, task, slot)
            tmp = dest.with_suffix(".tmp")
            image.save(tmp, format="PNG")
            tmp.replace(dest)
            record = SyntheticRecord(
                task_id=task.task_id,
                slot=slot,
                source_entry=task.source_entry,
                source_domain=task.source_domain,
                guidance_domain=task.guidance_domain,
                class_name=task.class_name,
                prompt=task.prompt,
                path=str(dest.relative_to(work_dir)),
                params=tuple(sorted(task_params.items())),
            )
            with lock:
                with ckpt_path.open("a") as fh:
                    fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
                    fh.flush()
                new_records.append(record)

    start = time.perf_counter()
    if workers <= 1:
        for task in plan.tasks:
            run_task(task)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_task, plan.tasks))
    wall = time.perf_counter() - start

    all_records = list(completed.values()) + new_records
    by_key = {(r.task_id, r.slot): r for r in all_records}
    done_tasks = sum(
        1
        for t in plan.tasks
        if all((t.task_id, s) in by_key for s in range(t.batch_size))
    )
    records = [by_key[k] for k in sorted(by_key)]
    return ExecutionResult(
        records=records,
        failures=sorted(failures, key=lambda f: f["task"]),
        backend_calls=calls,
        wall_time=wall,
        tasks_total=len(plan.tasks),
        tasks_done=done_tasks,
    )


def materialize_augmented_dataset(
    manifest: DomainDatasetManifest,
    records: Sequence[SyntheticRecord],
    work_dir: str | Path,
    out_root: str | Path,
    *,
    include_originals: bool = True,
    resume: bool = False,
) -> DomainDatasetManifest:
    """Lay out originals plus generated images as a scannable dataset tree.

    Generated images land in pseudo-domains named
    ``gen_<source>__to__<guidance>/<class>/<source stem>__s<slot>.png``.
    Existing destination files are an error unless ``resume`` is set, in
    which case they are kept as-is.
    """
    import shutil

    work_dir = Path(work_dir)
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)

    def place(src: Path, dest: Path) -> None:
        if dest.exists():
            if resume:
                return
            raise FileExistsError(f"refusing to overwrite {dest}")
        dest.parent.mkdir(parents=True, exist_ok=True)
        tmp = dest.with_suffix(dest.suffix + ".tmp")
        shutil.copyfile(src, tmp)
        tmp.replace(dest)

    if include_originals:
        for entry in manifest.entries:
            place(manifest.path_of(entry), out_root / entry.relative_path)
    for record in records:
        pseudo = generated_domain_name(record.source_domain, record.guidance_domain)
        stem = record.source_entry.rsplit("/", 1)[-1]
        dest = out_root / pseudo / record.class_name / f"{stem}__s{record.slot}.png"
        place(work_dir / record.path, dest)
    return scan_dataset(out_root)
