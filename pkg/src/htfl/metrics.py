"""Round reports, accuracy evaluation, byte accounting, convergence, summaries.

Conventions: 1 MB in reports means 2**20 bytes; accuracy is fraction
correct in [0, 1]; convergence is the first round whose trailing moving
average reaches 99% of the best trailing moving average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .methods import byte_size

MEGABYTE = 2**20


@dataclass
class RoundReport:
    round: int
    upload_bytes: int
    download_bytes: int
    client_seconds: float
    server_seconds: float
    per_client_acc: list[float] | None = None
    avg_acc: float | None = None  # weighted by client test size
    unweighted_avg_acc: float | None = None


def to_mb(n_bytes: float) -> float:
    return n_bytes / MEGABYTE


def byte_account(packets, carrier, n_participants: int) -> tuple[int, int]:
    """Total upload and download bytes for one round.

    Upload sums the packets actually sent; download charges each
    participant the full broadcast carrier.
    """
    up = sum(byte_size(p) for p in packets)
    down = n_participants * byte_size(carrier)
    return int(up), int(down)


def evaluate_accuracy(per_correct: list[int], per_total: list[int]):
    """Weighted (pooled) and unweighted (per-client mean) accuracy."""
    per_total = [int(t) for t in per_total]
    if any(t == 0 for t in per_total):
        raise ValueError("every client needs a non-empty test set")
    per_acc = [c / t for c, t in zip(per_correct, per_total)]
    weighted = sum(per_correct) / sum(per_total)
    return per_acc, weighted, float(np.mean(per_acc))


@dataclass(frozen=True)
class ConvergenceSummary:
    converged_round: int
    window: int
    threshold: float


def detect_convergence(series, window: int = 10, threshold: float = 0.99) -> ConvergenceSummary:
    """First round whose trailing moving average reaches threshold * best.

    The moving average at round t (1-based) covers rounds t-window+1 .. t,
    so it is defined from round `window` on.
    """
    series = np.asarray(series, dtype=np.float64)
    if len(series) < window:
        raise ValueError(f"series of length {len(series)} shorter than window {window}")
    smoothed = np.convolve(series, np.ones(window) / window, mode="valid")
    target = threshold * smoothed.max()
    idx = int(np.argmax(smoothed >= target))
    return ConvergenceSummary(converged_round=idx + window, window=window, threshold=threshold)


def summarize(values, direction: str = "max") -> dict:
    """Mean, population standard deviation, and best value of repeats."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("nothing to summarize")
    best = float(arr.max() if direction == "max" else arr.min())
    return {"mean": float(arr.mean()), "std": float(arr.std()), "best": best}


def _eval_rounds(reports: list[RoundReport]):
    return [r for r in reports if r.avg_acc is not None]


def summarize_repeat(reports: list[RoundReport], window: int = 10, threshold: float = 0.99) -> dict:
    evals = _eval_rounds(reports)
    if not evals:
        raise ValueError("run produced no evaluation rounds")
    accs = [r.avg_acc for r in evals]
    out = {
        "final_acc": accs[-1],
        "final_unweighted_acc": evals[-1].unweighted_avg_acc,
        "mean_up_bytes": float(np.mean([r.upload_bytes for r in reports])),
        "rounds": len(reports),
    }
    # round 1 ships no knowledge yet, so steady-state download excludes it
    later = [r.download_bytes for r in reports if r.round >= 2]
    out["mean_down_bytes"] = float(np.mean(later)) if later else 0.0
    if len(accs) >= window:
        conv = detect_convergence(accs, window, threshold)
        smoothed = np.convolve(accs, np.ones(window) / window, mode="valid")
        out["converged_round"] = conv.converged_round
        out["best_smoothed_acc"] = float(smoothed.max())
    else:
        out["converged_round"] = None
        out["best_smoothed_acc"] = float(max(accs))
    return out


def summarize_run(per_repeat_reports: list[list[RoundReport]],
                  window: int = 10, threshold: float = 0.99) -> dict:
    repeats = [summarize_repeat(r, window, threshold) for r in per_repeat_reports]
    agg = {
        "final_acc": summarize([r["final_acc"] for r in repeats], "max"),
        "best_smoothed_acc": summarize([r["best_smoothed_acc"] for r in repeats], "max"),
        "mean_up_bytes": summarize([r["mean_up_bytes"] for r in repeats], "min"),
        "mean_down_bytes": summarize([r["mean_down_bytes"] for r in repeats], "min"),
    }
    conv = [r["converged_round"] for r in repeats if r["converged_round"] is not None]
    agg["converged_round"] = summarize(conv, "min") if conv else None
    return {"repeats": repeats, "aggregate": agg}
