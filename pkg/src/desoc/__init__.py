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
import os
import sys

# the modules import each other by bare name (see pythonpath in pyproject.toml)
sys.path.insert(0, os.path.dirname(os.path.realpath(__file__)))
