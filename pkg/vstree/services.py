"""
Run-store services: record repeated runs and aggregate their metrics
"""
import json
import logging
import math
from typing import Any, Dict, List, Mapping, Optional

from sqlalchemy import func
from sqlalchemy.orm import Session

from vstree.models import Run, RunMetric

logger = logging.getLogger(__name__)


class RunService:
    """Service for recorded runs (one row per seed / fold / repeat)"""

    def __init__(self, db: Session):
        self.db = db

    def record_run(
        self,
        command: str,
        tag: str,
        seed: int,
        config: Mapping[str, Any],
        metrics: Mapping[str, float],
    ) -> Run:
        """
        Store one run and its scalar metrics

        Args:
            command: CLI subcommand that produced the run
            tag: user label grouping repetitions of the same experiment
            seed: seed of this repetition
            config: JSON-serializable flags echo
            metrics: name -> finite value

        Returns:
            The persisted Run
        """
        run = Run(command=command, tag=tag, seed=int(seed), config_json=json.dumps(dict(config), sort_keys=True))
        for name, value in sorted(metrics.items()):
            if not math.isfinite(value):
                logger.warning(f"Skipping non-finite metric {name}={value}")
                continue
            run.metrics.append(RunMetric(name=name, value=float(value)))
        self.db.add(run)
        self.db.flush()
        logger.info(f"Recorded {command} run {run.id} (tag={tag}, seed={seed})")
        return run

    def list_runs(self, command: Optional[str] = None, tag: Optional[str] = None) -> List[Dict[str, Any]]:
        query = self.db.query(Run)
        if command is not None:
            query = query.filter(Run.command == command)
        if tag is not None:
            query = query.filter(Run.tag == tag)
        return [
            {
                "run_id": run.id,
                "command": run.command,
                "tag": run.tag,
                "seed": run.seed,
                "metrics": {metric.name: metric.value for metric in run.metrics},
            }
            for run in query.order_by(Run.id).all()
        ]

    def metric_summary(self, command: Optional[str] = None, tag: Optional[str] = None) -> List[Dict[str, Any]]:
        """Mean and population std of every metric, grouped by (command, tag, name)"""
        query = self.db.query(
            Run.command,
            Run.tag,
            RunMetric.name,
            func.count(RunMetric.id).label("count"),
            func.avg(RunMetric.value).label("mean"),
            func.avg(RunMetric.value * RunMetric.value).label("mean_square"),
        ).join(RunMetric, Run.id == RunMetric.run_id)
        if command is not None:
            query = query.filter(Run.command == command)
        if tag is not None:
            query = query.filter(Run.tag == tag)
        results = query.group_by(Run.command, Run.tag, RunMetric.name).order_by(Run.command, Run.tag, RunMetric.name).all()

        return [
            {
                "command": result.command,
                "tag": result.tag,
                "metric": result.name,
                "count": result.count,
                "mean": float(result.mean),
                "std": math.sqrt(max(float(result.mean_square) - float(result.mean) ** 2, 0.0)),
            }
            for result in results
        ]
