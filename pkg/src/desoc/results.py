#  This file is part of the DeSOC toolkit.
#
#  DeSOC is free software: you can redistribute it and/or modify
#  it under the terms of the GNU General Public License as published by
#  the Free Software Foundation, either version 3 of the License, or
#  (at your option) any later version.
#
#  DeSOC is distributed in the hope that it will be useful,
#  but WITHOUT ANY WARRANTY; without even the implied warranty of
#  MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#  GNU General Public License for more details.
#
#  You should have received a copy of the GNU General Public License
#  along with DeSOC.  If not, see <http://www.gnu.org/licenses/>.
#
#  Copyright (c) 2025 by the DeSOC developers
#
"""
Result tables (CSV, ten significant digits) and the JSON run summary.
Rendezvous tables are in days, km and kg; orbit-raising tables stay in scaled units.
"""
from __future__ import annotations

import logging
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import platformdirs
from pydantic import BaseModel, Field

from analysis import DispersionReport, SweepResult
from astro import mee_eccentricity, mee_inclination
from transcription import DiscreteTrajectory, ProblemDefinition, ProblemFamily
from utils import atomic_write_text, atomic_writer

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"


def default_output_dir() -> Path:
    return platformdirs.user_data_path(appname="desoc", ensure_exists=True) / "results"


def trajectory_table(traj: DiscreteTrajectory, problem: ProblemDefinition) -> pd.DataFrame:
    """One row per node."""
    columns: dict[str, np.ndarray] = {"t": problem.time_from_canonical(traj.times)}
    if traj.family is ProblemFamily.MEE_RENDEZVOUS:
        scaling = problem.scaling
        elements = traj.states
        columns["p"] = scaling.length_from_canonical(elements[:, 0])
        for i, label in enumerate(("f", "g", "h", "k", "L"), start=1):
            columns[label] = elements[:, i]
        columns["m"] = scaling.mass_from_canonical(traj.mass)
        columns["lambda_T"] = traj.lambda_t
        for i, label in enumerate(traj.control_labels):
            columns[label] = traj.controls[:, i]
        columns["thrust"] = scaling.thrust_from_canonical(problem.canonical_spacecraft.thrust * traj.controls[:, 0])
        columns["ecc"] = mee_eccentricity(elements)
        columns["inc"] = np.degrees(mee_inclination(elements))
    else:
        for i, label in enumerate(traj.state_labels):
            columns[label] = traj.states[:, i]
        columns["m"] = traj.mass
        columns["lambda_T"] = traj.lambda_t
        columns["phi"] = traj.controls[:, 0]
    return pd.DataFrame(columns)


def dispersion_table(report: DispersionReport) -> pd.DataFrame:
    """One row per thrust value; the first row is the nominal thrust."""
    rows = [{"thrust": run.thrust,
             "sensitive_cost": run.sensitive_cost,
             "d": math.nan if run.d is None else run.d,
             "status": run.status,
             "terminal_miss": math.nan if run.terminal_miss is None else run.terminal_miss,
             "mode": report.mode.value}
            for run in report.runs]
    return pd.DataFrame(rows, columns=["thrust", "sensitive_cost", "d", "status", "terminal_miss", "mode"])


def sweep_table(result: SweepResult, problem: ProblemDefinition) -> pd.DataFrame:
    """
    One row per grid point with columns t2, cost_nominal, cost_perturbed_i, d_i, status.
    Failed points keep their row with empty numbers.
    """
    width = max((len(p.report.runs) - 1 for p in result.points if p.report is not None), default=0)
    columns = ["t2", "cost_nominal"]
    columns += [f"cost_perturbed_{i}" for i in range(1, width + 1)]
    columns += [f"d_{i}" for i in range(1, width + 1)]
    columns += ["status"]

    rows = []
    for point in result.points:
        row = {"t2": float(problem.time_from_canonical(point.t2)), "status": point.status}
        if point.report is not None:
            row["cost_nominal"] = point.report.nominal_cost
            for i, run in enumerate(point.report.runs[1:], start=1):
                row[f"cost_perturbed_{i}"] = run.sensitive_cost
                row[f"d_{i}"] = math.nan if run.d is None else run.d
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)


class RunSummary(BaseModel):
    command: str
    problem: str
    family: str
    seed: int = 0
    status: str
    objective: float | None = None
    terminal_part: float | None = None
    penalty_part: float | None = None
    sensitive_cost: float | None = None
    feasibility: float | None = None
    optimality: float | None = None
    wall_time: float | None = None
    thrust: float
    isp: float | None = None
    m0: float | None = None
    segments: int
    q_weight: float
    t1: float
    t2: float
    mode: str | None = Field(default=None, description="dispersion or sweep mode")
    message: str = ""
    created: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


def write_table(df: pd.DataFrame, path: Path | str) -> Path:
    with atomic_writer(path) as fh:
        df.to_csv(fh, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(df)} rows to {path}")
    return Path(path)


def write_summary(summary: RunSummary, path: Path | str) -> Path:
    return atomic_write_text(path, summary.model_dump_json(indent=2))
