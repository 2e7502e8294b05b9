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
import json

import pytest
from pydantic import ValidationError

from analysis import PerturbationMode
from configuration.problem_file import (DesensitizationSection, OrbitRaisingProblemFile, RendezvousProblemFile,
                                        apply_overrides, dump_problem_file, load_problem_file, parse_problem_file,
                                        solver_options, to_problem_definition)
from configuration.problem_library import ProblemKey, ProblemLibrary
from errors import ProblemFileError
from transcription import ProblemFamily


@pytest.mark.parametrize("key", ProblemLibrary.all_keys())
def test_bundled_problems_load(key):
    pf = load_problem_file(key)
    assert pf.family == json.loads(ProblemLibrary.path(ProblemKey(key)).read_text())["family"]
    problem = to_problem_definition(pf)
    assert problem.tf > problem.t0
    # dispersion experiments are chosen on the command line
    assert pf.perturbation is None


def test_comet_problem_values():
    pf = load_problem_file(ProblemKey.COMET_67P)
    assert isinstance(pf, RendezvousProblemFile)
    assert pf.spacecraft.thrust == 0.6
    assert pf.spacecraft.isp == 3000.0
    assert pf.spacecraft.m0 == 3000.0
    assert pf.tf == 1776.0


def test_rendezvous_is_canonical():
    pf = load_problem_file(ProblemKey.COMET_67P)
    problem = to_problem_definition(pf)
    assert problem.family is ProblemFamily.MEE_RENDEZVOUS
    assert problem.gravity.mu == pytest.approx(1.0)
    assert problem.initial_state.p == pytest.approx(1.0, abs=0.05)
    assert problem.initial_mass == 1.0
    assert problem.desensitization.t2 == pytest.approx(problem.tf)
    assert float(problem.time_from_canonical(problem.tf)) == pytest.approx(1776.0)
    assert problem.canonical_spacecraft.thrust == pytest.approx(0.6 / problem.scaling.force_unit)


def test_orbit_raising_definition():
    problem = to_problem_definition(load_problem_file(ProblemKey.ORBIT_RAISING))
    assert problem.family is ProblemFamily.ORBIT_RAISING
    assert problem.thrust == 0.1405
    assert problem.desensitization.q_weight == 4e-4


def test_dump_round_trip(tmp_path):
    pf = load_problem_file(ProblemKey.DIONYSUS)
    path = tmp_path / "dionysus.json"
    path.write_text(dump_problem_file(pf))
    assert load_problem_file(path) == pf
    assert parse_problem_file(dump_problem_file(pf)) == pf


def test_unknown_key_is_rejected():
    data = json.loads(ProblemLibrary.path(ProblemKey.ORBIT_RAISING).read_text())
    data["desensitization"]["bogus"] = 1.0
    with pytest.raises(ValidationError):
        parse_problem_file(json.dumps(data))


def test_unknown_family_is_rejected():
    data = json.loads(ProblemLibrary.path(ProblemKey.ORBIT_RAISING).read_text())
    data["family"] = "lunar_landing"
    with pytest.raises(ValidationError):
        parse_problem_file(json.dumps(data))


def test_missing_source():
    with pytest.raises(ProblemFileError) as info:
        load_problem_file("no_such_problem")
    assert info.value.source == "no_such_problem"


def test_omitted_window_is_the_full_horizon():
    pf = load_problem_file(ProblemKey.ORBIT_RAISING)
    open_window = pf.model_copy(update={"desensitization": DesensitizationSection(q_weight=4e-4)})
    assert to_problem_definition(open_window).desensitization == to_problem_definition(pf).desensitization


def test_overrides():
    pf = load_problem_file(ProblemKey.ORBIT_RAISING)
    changed = apply_overrides(pf, q_weight=1e-3, t2=2.0, segments=12, seed=5, thrust_pct=10.0, mode="refly")
    assert changed.desensitization.q_weight == 1e-3
    assert changed.desensitization.t2 == 2.0
    assert changed.mesh.segments == 12
    assert changed.perturbation.relative == [0.1]
    assert changed.perturbation.absolute == []
    assert changed.perturbation.mode is PerturbationMode.REFLY
    assert solver_options(changed).seed == 5
    assert pf.desensitization.q_weight == 4e-4


def test_overrides_are_validated():
    pf = load_problem_file(ProblemKey.ORBIT_RAISING)
    with pytest.raises(ValidationError):
        apply_overrides(pf, q_weight=-1.0)
    with pytest.raises(ValidationError):
        apply_overrides(pf, t1=3.0, t2=2.0)


def test_mode_needs_a_perturbation():
    pf = load_problem_file(ProblemKey.ORBIT_RAISING)
    with pytest.raises(ProblemFileError):
        apply_overrides(pf, mode=PerturbationMode.REFLY)


def test_orbit_raising_burnout():
    with pytest.raises(ValidationError):
        OrbitRaisingProblemFile(tf=20.0)
    assert OrbitRaisingProblemFile(tf=3.32).model.thrust == 0.1405


def test_mass_floor_below_initial_mass():
    data = json.loads(ProblemLibrary.path(ProblemKey.COMET_67P).read_text())
    data["mass_floor"] = 3000.0
    with pytest.raises(ValidationError):
        parse_problem_file(json.dumps(data))
