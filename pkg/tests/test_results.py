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
import io

import numpy as np
import pandas as pd
import pytest

from analysis import DispersionReport, DispersionRun, PerturbationMode, SweepPoint, SweepResult
from problem_factory import orbit_raising_problem, rendezvous_problem
from results import (RunSummary, dispersion_table, sweep_table, trajectory_table, write_summary, write_table)
from transcription import build_mesh, build_nlp, extract_solution, initial_guess


def guess_trajectory(problem, segments=4):
    nlp = build_nlp(problem, build_mesh(problem, segments))
    return extract_solution(nlp, initial_guess(problem, nlp.mesh))


def dispersion_report() -> DispersionReport:
    return DispersionReport(mode=PerturbationMode.RESOLVE, nominal_thrust=0.1405, nominal_cost=1.5,
                            nominal_status="converged",
                            runs=[DispersionRun(thrust=0.1405, sensitive_cost=1.5, d=0.0, status="converged"),
                                  DispersionRun(thrust=0.1505, sensitive_cost=1.6, d=0.1, status="converged"),
                                  DispersionRun(thrust=0.1305, status="failed", message="stalled")])


def test_orbit_raising_table():
    problem = orbit_raising_problem()
    df = trajectory_table(guess_trajectory(problem), problem)
    assert list(df.columns) == ["t", "r", "u", "v", "m", "lambda_T", "phi"]
    assert len(df) == 9
    assert df["t"].iloc[-1] == pytest.approx(3.32)
    assert df["m"].iloc[-1] == pytest.approx(1.0 - 0.0749 * 3.32)


def test_rendezvous_table():
    problem = rendezvous_problem()
    df = trajectory_table(guess_trajectory(problem), problem)
    assert list(df.columns) == ["t", "p", "f", "g", "h", "k", "L", "m", "lambda_T", "delta", "u_r", "u_t", "u_n",
                                "thrust", "ecc", "inc"]
    assert df["p"].iloc[0] == pytest.approx(1e-3)
    assert df["thrust"].iloc[0] == pytest.approx(0.025)
    assert df["ecc"].iloc[0] == pytest.approx(0.01)
    assert df["inc"].iloc[0] == pytest.approx(0.0)


def test_table_number_format(tmp_path):
    path = write_table(pd.DataFrame({"x": [1.0 / 3.0, 2.0e-12]}), tmp_path / "table.csv")
    assert path.read_text().splitlines() == ["x", "0.3333333333", "2e-12"]


def test_dispersion_table():
    df = dispersion_table(dispersion_report())
    assert list(df.columns) == ["thrust", "sensitive_cost", "d", "status", "terminal_miss", "mode"]
    assert df["d"].iloc[0] == 0.0
    assert np.isnan(df["d"].iloc[2])
    assert set(df["mode"]) == {"resolve"}


def test_sweep_table(tmp_path):
    problem = orbit_raising_problem(q_weight=1.0)
    result = SweepResult(mode="chained", points=[
        SweepPoint(t2=1.0, status="failed", message="stalled"),
        SweepPoint(t2=2.0, status="partial", report=dispersion_report()),
    ])
    df = sweep_table(result, problem)
    assert list(df.columns) == ["t2", "cost_nominal", "cost_perturbed_1", "cost_perturbed_2", "d_1", "d_2",
                                "status"]
    assert df["status"].tolist() == ["failed", "partial"]
    assert np.isnan(df["cost_nominal"].iloc[0])
    assert df["d_1"].iloc[1] == pytest.approx(0.1)

    text = write_table(df, tmp_path / "sweep.csv").read_text()
    assert pd.read_csv(io.StringIO(text))["t2"].tolist() == [1.0, 2.0]


def test_summary_round_trip(tmp_path):
    summary = RunSummary(command="solve", problem="orbit raising", family="orbit_raising", status="converged",
                         objective=-1.5, sensitive_cost=1.5, thrust=0.1405, segments=40, q_weight=4e-4, t1=0.0,
                         t2=3.32)
    path = write_summary(summary, tmp_path / "out" / "summary.json")
    assert RunSummary.model_validate_json(path.read_text()) == summary
