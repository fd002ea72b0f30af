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

import hashlib
import math

import numpy as np
import pytest

import pivotkit

TINY = {"num_classes": "4", "vt_size": "32", "va_size": "32", "at_gold_size": "8", "eval_size": "16"}


def test_patch_grid():
    assert pivotkit.patch_grid(1000, 128, (32, 32), (16, 24)) == (61, 5, 305)
    with pytest.raises(pivotkit.PivotkitError):
        pivotkit.patch_grid(8, 8, (16, 16), (16, 16))


@pytest.mark.parametrize("n", [2, 8, 64])
def test_uniform_logits(n):
    a = np.zeros((n, 4))
    a[:, 0] = 1.0
    loss, grad_a, grad_b = pivotkit.info_nce(a, a.copy(), 0.07)
    assert abs(loss - 2 * math.log(n)) < 1e-9
    assert grad_a.shape == (n, 4) and grad_b.shape == (n, 4)


def test_retrieval_and_map():
    rng = np.random.default_rng(0)
    q = rng.standard_normal((10, 8)).astype(np.float32)
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    rec = pivotkit.recall_at_k(q, q.copy(), [[i] for i in range(10)], [1, 5])
    assert rec == {1: 1.0, 5: 1.0}
    value, per_class, excluded = pivotkit.mean_average_precision(np.eye(3), [[0], [1], [1]])
    assert excluded == [2]
    assert math.isnan(per_class[2])
    # class 1: item 1 first, then the tie 0 before 2 by index
    assert value == pytest.approx((1.0 + (1.0 + 2.0 / 3.0) / 2) / 2)


def test_scaling_fit():
    counts = [2.0**k for k in range(5, 13)]
    metrics = [3.0 + 1.5 * math.log2(c) for c in counts]
    fit = pivotkit.fit_scaling(counts, metrics, 3.0 + 1.5 * 21)
    assert fit["slope"] == pytest.approx(1.5, abs=1e-9)
    assert fit["extrapolated_log2"] == pytest.approx(21.0, abs=1e-9)
    assert fit["extrapolated"]


def test_world_and_cli(tmp_path):
    s = pivotkit.generate_world(TINY, seed=4)
    assert s["num_classes"] == 4 and s["eval"] == 16
    with pytest.raises(pivotkit.PivotkitError):
        pivotkit.generate_world({"not_a_key": "1"})

    cfg = tmp_path / "w.cfg"
    cfg.write_text("".join(f"{k} = {v}\n" for k, v in TINY.items()))
    code, out, err = pivotkit.cli(["gen-world", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "w")])
    assert code == 0, err
    assert pivotkit.load_world(str(tmp_path / "w")) == s
    code, _, err = pivotkit.cli(["finetune-at", "--world", "w", "--va", "none", "--pairs", "p", "--out", "o"])
    assert code == 1 and "missing VA checkpoint" in err
    assert pivotkit.cli(["gen-world"])[0] == 2


def test_sha256():
    assert pivotkit.sha256(b"pivot") == hashlib.sha256(b"pivot").hexdigest()
