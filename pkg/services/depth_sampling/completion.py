"""Sparse-to-dense completion oracle, error metrics and the strategy comparison."""

import math
import time
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from sklearn.metrics import mean_absolute_error, mean_squared_error
from sklearn.neighbors import NearestNeighbors

from services.common.logging import get_logger, log_performance, log_pipeline_event

from .exceptions import InvalidInputError
from .models import (
    CameraIntrinsics,
    ComparisonRow,
    ComparisonSummary,
    CompletionConfig,
    DepthMap,
    EvaluationConfig,
    MetricsReport,
    NeighborhoodConfig,
    ReliabilityConfig,
    ReliabilityMap,
    SamplerConfig,
    SamplingStrategy,
    SparseDepthMap,
)
from .sampler import geometry_reliability, sample_frame

logger = get_logger(__name__)

IDW_EPSILON = 1e-9
CSV_HEADER = ("strategy", "k", "seed", "mae", "rmse", "evaluated_pixels")
STRATEGY_ORDER = (SamplingStrategy.GEOMETRY_AWARE, SamplingStrategy.UNIFORM)


def complete_idw(
    sparse: SparseDepthMap, cfg: Optional[CompletionConfig] = None
) -> DepthMap:
    """Dense depth by inverse-distance weighting of the nearest samples.

    Distances are in pixels. A pixel that coincides with a sample takes the
    sample depth exactly.
    """
    cfg = cfg or CompletionConfig()
    height, width = sparse.shape
    vs, us = np.nonzero(sparse.values > 0)
    if vs.size == 0:
        raise InvalidInputError("sparse depth map has no samples")

    sample_xy = np.column_stack([us, vs]).astype(np.float64)
    sample_depth = sparse.values[vs, us]
    grid_v, grid_u = np.mgrid[0:height, 0:width]
    grid_xy = np.column_stack([grid_u.ravel(), grid_v.ravel()]).astype(np.float64)

    neighbors = min(cfg.neighbors, vs.size)
    index = NearestNeighbors(n_neighbors=neighbors).fit(sample_xy)
    dist, idx = index.kneighbors(grid_xy)

    weights = 1.0 / (dist**cfg.power + IDW_EPSILON)
    dense = (weights * sample_depth[idx]).sum(axis=1) / weights.sum(axis=1)
    exact = dist[:, 0] == 0
    dense[exact] = sample_depth[idx[exact, 0]]

    return DepthMap(
        values=dense.reshape(height, width), valid=np.ones((height, width), bool)
    )


def evaluation_mask(
    gt: DepthMap, cfg: Optional[EvaluationConfig] = None
) -> np.ndarray:
    """Valid ground-truth pixels, optionally depth-capped and border-cropped."""
    cfg = cfg or EvaluationConfig()
    mask = gt.valid.copy()
    if cfg.max_depth is not None:
        mask &= gt.values <= cfg.max_depth
    if cfg.crop:
        border = np.ones_like(mask)
        border[cfg.crop : gt.height - cfg.crop, cfg.crop : gt.width - cfg.crop] = False
        mask &= ~border
    return mask


def compute_metrics(pred: DepthMap, gt: DepthMap, mask: np.ndarray) -> MetricsReport:
    """MAE and RMSE in meters over ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if not (pred.shape == gt.shape == mask.shape):
        raise InvalidInputError(
            f"shape mismatch: pred {pred.shape}, gt {gt.shape}, mask {mask.shape}"
        )
    if np.any(mask & ~gt.valid):
        raise InvalidInputError("evaluation mask covers invalid ground-truth pixels")
    count = int(mask.sum())
    if count == 0:
        raise InvalidInputError("evaluation mask is empty")

    y_true = gt.values[mask]
    y_pred = pred.values[mask]
    mae = float(mean_absolute_error(y_true, y_pred))
    rmse = math.sqrt(float(mean_squared_error(y_true, y_pred)))
    return MetricsReport(mae=mae, rmse=rmse, evaluated_pixels=count)


class ComparisonTable(BaseModel):
    """Per-(strategy, k, seed) results of a sampling comparison."""

    rows: List[ComparisonRow] = Field(default_factory=list)

    def sorted_rows(self) -> List[ComparisonRow]:
        return sorted(self.rows, key=lambda row: row.key)

    def to_frame(self) -> pd.DataFrame:
        """Rows as a DataFrame with the CSV columns, strategies as their values."""
        records = [row.model_dump(mode="json") for row in self.sorted_rows()]
        return pd.DataFrame(records, columns=list(CSV_HEADER))

    def _summary_frame(self) -> pd.DataFrame:
        return (
            self.to_frame()
            .groupby(["strategy", "k"], sort=True)
            .agg(
                runs=("seed", "size"),
                mae=("mae", "mean"),
                rmse=("rmse", "mean"),
                evaluated_pixels=("evaluated_pixels", "mean"),
            )
            .reset_index()
        )

    def summary(self) -> List[ComparisonSummary]:
        """Mean MAE and RMSE per (strategy, k)."""
        return [
            ComparisonSummary(
                strategy=record["strategy"],
                k=int(record["k"]),
                runs=int(record["runs"]),
                mae=float(record["mae"]),
                rmse=float(record["rmse"]),
                evaluated_pixels=int(round(record["evaluated_pixels"])),
            )
            for record in self._summary_frame().to_dict("records")
        ]

    def improvements(self) -> Dict[int, float]:
        """Relative RMSE reduction of geometry-aware over uniform sampling, per k."""
        means = {(s.strategy, s.k): s.rmse for s in self.summary()}
        result = {}
        for (strategy, k), uniform_rmse in means.items():
            if strategy != SamplingStrategy.UNIFORM or uniform_rmse == 0:
                continue
            geometry_rmse = means.get((SamplingStrategy.GEOMETRY_AWARE, k))
            if geometry_rmse is not None:
                result[k] = (uniform_rmse - geometry_rmse) / uniform_rmse
        return result

    def to_csv(self) -> str:
        """CSV text: one row per run, then summary rows with seed ``mean``."""
        runs = self.to_frame().astype({"seed": object})
        means = pd.DataFrame(
            [
                summary.model_dump(mode="json", exclude={"runs"}) | {"seed": "mean"}
                for summary in self.summary()
            ],
            columns=list(CSV_HEADER),
        )
        table = pd.concat([runs, means], ignore_index=True) if len(means) else runs
        # full repr precision for the float columns
        return table.to_csv(index=False, lineterminator="\n")


def run_comparison(
    gt: DepthMap,
    intrinsics: CameraIntrinsics,
    k_values: Sequence[int],
    n_seeds: int,
    noisy: Optional[DepthMap] = None,
    ncfg: Optional[NeighborhoodConfig] = None,
    rcfg: Optional[ReliabilityConfig] = None,
    ccfg: Optional[CompletionConfig] = None,
    ecfg: Optional[EvaluationConfig] = None,
    base_seed: int = 0,
    strategies: Iterable[SamplingStrategy] = STRATEGY_ORDER,
) -> ComparisonTable:
    """Sample the (noisy) frame with each strategy, complete, score against ``gt``.

    Seeds run from ``base_seed`` to ``base_seed + n_seeds - 1``. The
    reliability map is computed once per frame and shared by every run.
    """
    if n_seeds < 1:
        raise InvalidInputError(f"n_seeds must be >= 1, got {n_seeds}")
    if not k_values:
        raise InvalidInputError("k_values is empty")
    source = noisy if noisy is not None else gt
    if source.shape != gt.shape:
        raise InvalidInputError("noisy frame and ground truth differ in shape")

    start_time = time.time()
    ncfg = ncfg or NeighborhoodConfig()
    rcfg = rcfg or ReliabilityConfig()
    ccfg = ccfg or CompletionConfig()
    mask = evaluation_mask(gt, ecfg)
    strategies = tuple(strategies)

    reliability: Optional[ReliabilityMap] = None
    if SamplingStrategy.GEOMETRY_AWARE in strategies:
        reliability = geometry_reliability(source, intrinsics, ncfg, rcfg)

    rows = []
    for k in sorted(set(k_values)):
        for offset in range(n_seeds):
            seed = base_seed + offset
            for strategy in strategies:
                result = sample_frame(
                    source,
                    intrinsics,
                    ncfg,
                    rcfg,
                    SamplerConfig(k=k, seed=seed, strategy=strategy),
                    reliability=reliability,
                )
                pred = complete_idw(result.sparse, ccfg)
                report = compute_metrics(pred, gt, mask)
                rows.append(
                    ComparisonRow(
                        strategy=strategy,
                        k=k,
                        seed=seed,
                        mae=report.mae,
                        rmse=report.rmse,
                        evaluated_pixels=report.evaluated_pixels,
                    )
                )

    table = ComparisonTable(rows=sorted(rows, key=lambda row: row.key))
    for k, reduction in sorted(table.improvements().items()):
        log_pipeline_event(logger, "comparison", k=k, rmse_reduction=reduction)
    log_performance(
        logger,
        "run_comparison",
        time.time() - start_time,
        k_values=list(sorted(set(k_values))),
        n_seeds=n_seeds,
        runs=len(rows),
    )
    return table


def merge_tables(tables: Sequence[ComparisonTable]) -> ComparisonTable:
    """Average MAE and RMSE per (strategy, k, seed) across frames.

    Evaluated pixel counts are summed.
    """
    if not tables:
        raise InvalidInputError("no comparison tables to merge")
    merged = (
        pd.concat([table.to_frame() for table in tables], ignore_index=True)
        .groupby(["strategy", "k", "seed"], sort=True)
        .agg(
            mae=("mae", "mean"),
            rmse=("rmse", "mean"),
            evaluated_pixels=("evaluated_pixels", "sum"),
        )
        .reset_index()
    )
    rows = [
        ComparisonRow(
            strategy=record["strategy"],
            k=int(record["k"]),
            seed=int(record["seed"]),
            mae=float(record["mae"]),
            rmse=float(record["rmse"]),
            evaluated_pixels=int(record["evaluated_pixels"]),
        )
        for record in merged.to_dict("records")
    ]
    return ComparisonTable(rows=rows)
