"""Reference synthetic benchmark: original vs hybrid vs logic training."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .kb import builtin_kb
from .metrics import MetricsReport, evaluate
from .synthetic import SyntheticConfig, answer_vocabulary, generate_synthetic, split_by_image
from .trainer import MODES, TrainConfig, predict, train

__all__ = ["BenchmarkConfig", "RunResult", "run_one", "run_benchmark", "summarize"]


@dataclass(frozen=True)
class BenchmarkConfig:
    n_families: int = 2000  # two families per image
    seeds: tuple[int, ...] = (41, 42, 43)
    test_fraction: float = 0.2
    train: TrainConfig = TrainConfig()
    data: SyntheticConfig = SyntheticConfig()
    modes: tuple[str, ...] = MODES


@dataclass
class RunResult:
    mode: str
    seed: int
    report: MetricsReport
    train_answer_acc: float
    seconds: float
    curves: list = field(default_factory=list)


def run_one(mode: str, seed: int, bench: BenchmarkConfig = BenchmarkConfig()) -> RunResult:
    records = generate_synthetic(bench.n_families // 2, seed=seed, cfg=bench.data)
    train_recs, test_recs = split_by_image(records, bench.test_fraction, seed=seed)
    cfg = replace(bench.train, mode=mode, seed=seed)
    kb = builtin_kb()
    start = time.perf_counter()
    result = train(cfg, train_recs, kb if mode == "logic" else None, answers=answer_vocabulary())
    seconds = time.perf_counter() - start
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = evaluate(predict(result.params, test_recs), test_recs, kb)
    final = result.curves[-1]["answer_acc"] if result.curves else float("nan")
    return RunResult(mode, seed, report, float(final), seconds, result.curves)


def run_benchmark(bench: BenchmarkConfig = BenchmarkConfig(), log=None) -> list[RunResult]:
    results = []
    for seed in bench.seeds:
        for mode in bench.modes:
            r = run_one(mode, seed, bench)
            if log is not None:
                log(f"seed {seed} {mode:8s} acc {r.report.accuracy:.4f} cons {r.report.consistency:.4f} "
                    f"dist {r.report.distribution:.4f} train_acc {r.train_answer_acc:.4f} ({r.seconds:.0f}s)")
            results.append(r)
    return results


def summarize(results: list[RunResult]) -> dict[str, dict[str, float]]:
    """Mean accuracy, consistency and distribution per mode."""
    out: dict[str, dict[str, float]] = {}
    for mode in dict.fromkeys(r.mode for r in results):
        rs = [r for r in results if r.mode == mode]
        out[mode] = {"accuracy": float(np.mean([r.report.accuracy for r in rs])),
                     "consistency": float(np.mean([r.report.consistency for r in rs])),
                     "distribution": float(np.mean([r.report.distribution for r in rs])),
                     "train_answer_acc": float(np.mean([r.train_answer_acc for r in rs])),
                     "seconds": float(np.sum([r.seconds for r in rs]))}
    return out
