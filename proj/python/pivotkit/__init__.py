# Copyright 2026 The pivotkit Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python bindings for pivotkit."""

from pivotkit._core import (
    PivotkitError,
    average_precision,
    cli,
    fit_scaling,
    generate_world,
    info_nce,
    load_world,
    mean_average_precision,
    patch_grid,
    recall_at_k,
    sha256,
)

__all__ = [
    "PivotkitError",
    "average_precision",
    "cli",
    "fit_scaling",
    "generate_world",
    "info_nce",
    "load_world",
    "mean_average_precision",
    "patch_grid",
    "recall_at_k",
    "sha256",
]
__version__ = "0.1.0"
