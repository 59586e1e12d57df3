"""Batch experiment runner: intra-model attacks, transfer evaluation,
hyper-parameter sweeps and calibration, with CSV/JSON/figure reports.

Per-image artifacts are ``<stem>.adv.png`` and ``<stem>.record.json``; an
output directory is the unit of transfer evaluation.  All randomness flows
from the run seed: image i uses the child stream keyed by (seed, i), test-set
sampling uses a dedicated stream key, so batches are order- and
concurrency-independent.
"""

from __future__ import annotations

import csv
import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import plots
from .attack import AttackConfig, run_attack, rng_for_image
from .image import ImageTensor, load_image, save_image
from .loss import LossKind
from .metrics import DegenerateCorrelationError, ScorePair, rgo, rgo_single, srcc, plcc
from .oracle import (
    BUILTIN_SCORERS,
    OracleFailure,
    QualityOracle,
    ScoreBounds,
    calibrate_logistic,
)
from .wire import connect_external_oracle

# Stream key reserved for test-set sampling; image streams use small indices.
_SAMPLE_STREAM_KEY = 2**32 - 1

AGGREGATE_TOLERANCE = 1e-12


class ReportConsistencyError(ValueError):
    """Stored aggregates do not match the per-image records."""


@dataclass(frozen=True)
class DatasetManifest:
    """Image paths with their MOS values, pre-scaled to the score bounds."""

    entries: list[tuple[Path, float]]
    bounds: ScoreBounds


def load_manifest(path: str | Path, bounds: ScoreBounds) -> DatasetManifest:
    """Read a ``path,mos`` CSV (header required); paths resolve relative to it."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty manifest") from None
        if [h.strip() for h in header[:2]] != ["path", "mos"]:
            raise ValueError(f"{path}: expected header 'path,mos', got {header!r}")
        entries: list[tuple[Path, float]] = []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{lineno}: expected 'path,mos'")
            rel, mos_str = row[0].strip(), row[1].strip()
            if rel in seen:
                raise ValueError(f"{path}:{lineno}: duplicate image path {rel!r}")
            seen.add(rel)
            mos = float(mos_str)
            if not bounds.beta1 <= mos <= bounds.beta2:
                raise ValueError(
                    f"{path}:{lineno}: MOS {mos} outside bounds "
                    f"[{bounds.beta1}, {bounds.beta2}]; rescale the manifest"
                )
            entries.append(((path.parent / rel), mos))
    if not entries:
        raise ValueError(f"{path}: manifest lists no images")
    return DatasetManifest(entries=entries, bounds=bounds)


def make_oracle_factory(spec: str, bounds: ScoreBounds) -> Callable[[], QualityOracle]:
    """Turn an ``--oracle`` spec into a per-job oracle constructor.

    ``builtin:NAME`` instantiates an in-process scorer; ``cmd:...`` and
    ``tcp:host:port`` open a fresh wire connection per job.
    """
    if spec.startswith("builtin:"):
        name = spec[len("builtin:") :]
        if name not in BUILTIN_SCORERS:
            raise ValueError(f"unknown builtin scorer {name!r}; have {sorted(BUILTIN_SCORERS)}")
        return lambda: BUILTIN_SCORERS[name](bounds)
    if spec.startswith(("cmd:", "tcp:")):
        return lambda: connect_external_oracle(spec, bounds)
    raise ValueError(f"unknown oracle spec {spec!r}")


def _close_oracle(oracle: QualityOracle) -> None:
    close = getattr(oracle, "close", None)
    if callable(close):
        close()


def _correlations(predictions: list[float], mos: list[float]) -> tuple[Optional[float], Optional[float]]:
    try:
        s = srcc(predictions, mos)
    except (DegenerateCorrelationError, ValueError):
        s = None
    try:
        p = plcc(predictions, mos)
    except (DegenerateCorrelationError, ValueError):
        p = None
    return s, p


def compute_aggregates(records: list[dict], bounds: ScoreBounds) -> dict:
    pairs = [
        ScorePair(r["original_score"], r["final_score"], r["mos"]) for r in records
    ]
    mos = [p.mos for p in pairs]
    srcc_before, plcc_before = _correlations([p.original for p in pairs], mos)
    srcc_after, plcc_after = _correlations([p.adversarial for p in pairs], mos)
    return {
        "rgo": rgo(pairs, bounds) if pairs else None,
        "srcc_before": srcc_before,
        "srcc_after": srcc_after,
        "plcc_before": plcc_before,
        "plcc_after": plcc_after,
    }


def _config_echo(config: AttackConfig) -> dict:
    return {
        "T": config.max_iterations,
        "n": config.num_patches,
        "gamma0": config.gamma0,
        "rho": config.rho,
        "beta1": config.bounds.beta1,
        "beta2": config.bounds.beta2,
        "loss": config.loss.value,
        "seed": config.seed,
        "init_random": config.init_random,
        "patch_mode": config.patch_mode,
    }


@dataclass
class EvaluationReport:
    config: dict
    bounds: ScoreBounds
    records: list[dict]
    aggregates: dict
    curve: list[dict]
    failures: list[dict]

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "config": self.config,
            "bounds": [self.bounds.beta1, self.bounds.beta2],
            "records": self.records,
            "aggregates": self.aggregates,
            "curve": self.curve,
            "failures": self.failures,
        }
        (out_dir / "report.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n"
        )
        with open(out_dir / "aggregates.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            keys = ["rgo", "srcc_before", "srcc_after", "plcc_before", "plcc_after"]
            writer.writerow(keys)
            writer.writerow([self.aggregates.get(k) for k in keys])
        if self.curve:
            with open(out_dir / "curve.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["iteration", "queries", "mean_rgo"])
                for row in self.curve:
                    writer.writerow([row["iteration"], row["queries"], row["mean_rgo"]])
            plots.render_rgo_curve(
                [row["queries"] for row in self.curve],
                [row["mean_rgo"] for row in self.curve],
                out_dir / "rgo_vs_queries.png",
            )


def load_report(out_dir: str | Path) -> EvaluationReport:
    """Load a report directory, re-deriving aggregates to verify consistency."""
    out_dir = Path(out_dir)
    report_path = out_dir / "report.json"
    if not report_path.exists():
        raise ValueError(f"{out_dir} is not an attack output directory (no report.json)")
    payload = json.loads(report_path.read_text())
    bounds = ScoreBounds(*payload["bounds"])
    records = payload["records"]
    if records:
        recomputed = compute_aggregates(records, bounds)
        for key, value in recomputed.items():
            stored = payload["aggregates"].get(key)
            if value is None or stored is None:
                if value != stored:
                    raise ReportConsistencyError(f"aggregate {key}: {stored} vs {value}")
            elif abs(stored - value) > AGGREGATE_TOLERANCE:
                raise ReportConsistencyError(
                    f"aggregate {key}: stored {stored} differs from recomputed {value}"
                )
    return EvaluationReport(
        config=payload["config"],
        bounds=bounds,
        records=records,
        aggregates=payload["aggregates"],
        curve=payload.get("curve", []),
        failures=payload.get("failures", []),
    )


def _sample_entries(
    entries: list[tuple[Path, float]], k: Optional[int], seed: int
) -> list[tuple[Path, float]]:
    ordered = sorted(entries, key=lambda e: str(e[0]))
    if k is None or k >= len(ordered):
        return ordered
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(_SAMPLE_STREAM_KEY,)))
    )
    idx = rng.choice(len(ordered), size=k, replace=False)
    return [ordered[i] for i in sorted(idx)]


def _attack_one(
    index: int,
    image_path: Path,
    mos: float,
    config: AttackConfig,
    oracle_factory: Callable[[], QualityOracle],
    out_dir: Path,
    curve_every: int,
) -> dict:
    oracle = oracle_factory()
    try:
        x = load_image(image_path)
        rng = rng_for_image(config.seed, index)
        original_score = oracle.score(x)
        result = run_attack(
            x, oracle, config, original_score=original_score, rng=rng, curve_every=curve_every
        )
        if result.aborted:
            raise OracleFailure(result.abort_reason or "attack aborted")
        adv_name = image_path.stem + ".adv.png"
        save_image(result.adversarial, out_dir / adv_name, quantize=True)
        return {
            "image": str(image_path),
            "adversarial": adv_name,
            "image_index": index,
            "mos": mos,
            "original_score": result.original_score,
            "final_score": result.final_score,
            "rgo": rgo_single(result.original_score, result.final_score, config.bounds),
            "linf": result.linf,
            "queries": result.queries,
            "anchor_queries": 1,
            "seed": config.seed,
            "curve": [[t, s] for t, s in result.score_curve],
        }
    finally:
        _close_oracle(oracle)


def attack_batch(
    manifest: DatasetManifest,
    oracle_spec: str,
    config: AttackConfig,
    out_dir: str | Path,
    sample_k: Optional[int] = 50,
    jobs: int = 1,
    curve_every: int = 100,
) -> EvaluationReport:
    """Attack (a sample of) every manifest image and write the report artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if manifest.bounds != config.bounds:
        raise ValueError("manifest bounds differ from attack config bounds")
    selected = _sample_entries(manifest.entries, sample_k, config.seed)
    factory = make_oracle_factory(oracle_spec, config.bounds)

    records: list[dict] = []
    failures: list[dict] = []

    def job(args):
        index, (image_path, mos) = args
        return _attack_one(index, image_path, mos, config, factory, out_dir, curve_every)

    tasks = list(enumerate(selected))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_guarded(job), tasks))
    else:
        outcomes = [_guarded(job)(t) for t in tasks]

    for (index, (image_path, _)), outcome in zip(tasks, outcomes):
        if isinstance(outcome, dict):
            records.append(outcome)
        else:
            failures.append({"image": str(image_path), "error": str(outcome)})

    if not records:
        raise RuntimeError(
            "all attacks failed: " + "; ".join(f["error"] for f in failures[:3])
        )

    records.sort(key=lambda r: r["image"])
    for record in records:
        record["record_file"] = Path(record["image"]).stem + ".record.json"
        (out_dir / record["record_file"]).write_text(
            json.dumps(record, sort_keys=True, indent=2) + "\n"
        )

    report = EvaluationReport(
        config=_config_echo(config),
        bounds=config.bounds,
        records=records,
        aggregates=compute_aggregates(records, config.bounds),
        curve=_mean_rgo_curve(records, config.bounds),
        failures=failures,
    )
    report.write(out_dir)
    return report


def _guarded(fn):
    def wrapped(arg):
        try:
            return fn(arg)
        except Exception as exc:  # recorded per image, batch continues
            return exc

    return wrapped


def _mean_rgo_curve(records: list[dict], bounds: ScoreBounds) -> list[dict]:
    if not records or not records[0].get("curve"):
        return []
    iterations = [t for t, _ in records[0]["curve"]]
    rows = []
    for pos, t in enumerate(iterations):
        ratios = []
        for record in records:
            curve = record["curve"]
            if pos >= len(curve) or curve[pos][0] != t:
                return rows  # unaligned (aborted tails); stop at common prefix
            ratios.append(rgo_single(record["original_score"], curve[pos][1], bounds))
        rows.append(
            {
                "iteration": t,
                "queries": t + 1,
                "mean_rgo": sum(ratios) / len(ratios),
            }
        )
    return rows


def transfer_batch(
    adversarial_dir: str | Path,
    oracle_spec: str,
    out_dir: str | Path,
    jobs: int = 1,
) -> EvaluationReport:
    """Re-score original/adversarial pairs from an attack directory under a
    different oracle; no new attack iterations are run."""
    adversarial_dir = Path(adversarial_dir)
    source = load_report(adversarial_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    factory = make_oracle_factory(oracle_spec, source.bounds)

    def job(record):
        oracle = factory()
        try:
            original = load_image(record["image"])
            adversarial = load_image(adversarial_dir / record["adversarial"])
            return {
                "image": record["image"],
                "adversarial": record["adversarial"],
                "mos": record["mos"],
                "original_score": oracle.score(original),
                "final_score": oracle.score(adversarial),
                "queries": 2,
                "seed": record["seed"],
            }
        finally:
            _close_oracle(oracle)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(job, source.records))
    else:
        rows = [job(r) for r in source.records]

    for row in rows:
        row["rgo"] = rgo_single(row["original_score"], row["final_score"], source.bounds)
    rows.sort(key=lambda r: r["image"])

    report = EvaluationReport(
        config=dict(source.config, mode="transfer", transfer_oracle=oracle_spec),
        bounds=source.bounds,
        records=rows,
        aggregates=compute_aggregates(rows, source.bounds),
        curve=[],
        failures=[],
    )
    report.write(out_dir)
    return report


SWEEPABLE = ("rho", "n", "gamma0", "seed")


def sweep_batch(
    manifest: DatasetManifest,
    oracle_spec: str,
    base_config: AttackConfig,
    param: str,
    values: list[float],
    out_dir: str | Path,
    sample_k: Optional[int] = 50,
    jobs: int = 1,
    curve_every: int = 100,
) -> list[tuple[float, EvaluationReport]]:
    """Run one attack batch per swept value and emit a combined CSV/figure.

    Seed sweeps additionally append mean and standard deviation rows.
    """
    if param not in SWEEPABLE:
        raise ValueError(f"unknown sweep parameter {param!r}; choose from {SWEEPABLE}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results: list[tuple[float, EvaluationReport]] = []
    for value in values:
        if param == "rho":
            config = replace(base_config, rho=float(value))
        elif param == "n":
            config = replace(base_config, num_patches=int(value))
        elif param == "gamma0":
            config = replace(base_config, gamma0=float(value))
        else:
            config = replace(base_config, seed=int(value))
        sub = out_dir / f"{param}={value:g}"
        report = attack_batch(
            manifest, oracle_spec, config, sub, sample_k=sample_k, jobs=jobs, curve_every=curve_every
        )
        results.append((float(value), report))

    keys = ["rgo", "srcc_before", "srcc_after", "plcc_before", "plcc_after"]
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([param] + keys)
        for value, report in results:
            writer.writerow([value] + [report.aggregates.get(k) for k in keys])
        if param == "seed" and len(results) > 1:
            for stat_name, stat_fn in (("mean", statistics.fmean), ("std", statistics.stdev)):
                row = [stat_name]
                for key in keys:
                    vals = [r.aggregates.get(key) for _, r in results]
                    row.append(stat_fn(vals) if all(v is not None for v in vals) else None)
                writer.writerow(row)

    plots.render_sweep(
        param,
        [v for v, _ in results],
        [r.aggregates["rgo"] for _, r in results],
        out_dir / "sweep.png",
    )
    return results


def calibrate_from_csv(csv_path: str | Path, bounds: ScoreBounds, out_path: str | Path) -> dict:
    """Fit the logistic score mapping from a ``raw_score,mos`` CSV to JSON."""
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{csv_path}: empty calibration file") from None
        if [h.strip() for h in header[:2]] != ["raw_score", "mos"]:
            raise ValueError(f"{csv_path}: expected header 'raw_score,mos', got {header!r}")
        raw, mos = [], []
        for row in reader:
            if not row:
                continue
            raw.append(float(row[0]))
            mos.append(float(row[1]))
    mapping = calibrate_logistic(raw, mos, bounds)
    payload = {
        "a": mapping.a,
        "b": mapping.b,
        "c": mapping.c,
        "d": mapping.d,
        "beta1": bounds.beta1,
        "beta2": bounds.beta2,
    }
    Path(out_path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return payload
