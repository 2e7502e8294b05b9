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
from __future__ import annotations

from enum import Enum
from pathlib import Path

PROBLEM_DIR = Path(__file__).parent / "problems"


class ProblemKey(str, Enum):
    COMET_67P = "comet_67p"
    DIONYSUS = "dionysus"
    ORBIT_RAISING = "orbit_raising"


class ProblemLibrary:
    """
    The problem files that ship with the package.
    Each key maps to ``problems/<key>.json``.
    """

    @classmethod
    def path(cls, key: ProblemKey) -> Path:
        return PROBLEM_DIR / f"{ProblemKey(key).value}.json"

    @classmethod
    def all_keys(cls) -> list[str]:
        """Values of all bundled problem keys."""
        return [key.value for key in ProblemKey]

    @classmethod
    def describe(cls) -> dict[str, str]:
        """key -> file name, for help texts"""
        return {key.value: cls.path(key).name for key in ProblemKey}
