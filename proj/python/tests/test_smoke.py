# SPDX-License-Identifier: Apache-2.0
import itertools
import os
import pathlib

import pytest

import gde

DATA = pathlib.Path(os.environ.get("GDE_TEST_DATA_DIR", pathlib.Path(__file__).parents[2] / "tests" / "data"))


def small_config():
    cfg = gde.ModelConfig()
    cfg.d_model = 32
    cfg.image_size = 64
    return cfg


def test_count_tokens():
    tc = gde.count_tokens(640)
    assert tc["per_level"] == [6400, 1600, 400]
    assert tc["total"] == 8400
    assert tc["p5_ratio"] == 21


def test_token_id_matches_xxh64():
    xxhash = pytest.importorskip("xxhash")
    for word in ["cat", "dog", "traffic"]:
        assert gde.token_id(word) == xxhash.xxh64_intdigest(word.encode(), seed=0) % 4096


def test_hungarian_against_brute_force():
    cost = [[4.0, 1.0, 3.0], [2.0, 0.5, 5.0], [3.0, 2.0, 2.0]]
    pairs, total = gde.hungarian_match(cost)
    best = min(sum(cost[i][p[i]] for i in range(3)) for p in itertools.permutations(range(3)))
    assert total == pytest.approx(best)
    assert len(pairs) == 3


def test_generalized_iou():
    assert gde.generalized_iou((0.5, 0.5, 1, 1), (1.5, 1.5, 1, 1)) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        gde.generalized_iou((0.5, 0.5, 0, 1), (0.5, 0.5, 1, 1))


def test_weights_roundtrip_and_predict(tmp_path):
    cfg = small_config()
    ws = gde.init_weights(cfg, 7)
    path = tmp_path / "w.gde"
    gde.save_weights(ws, path)
    assert gde.load_weights(path) == ws
    cfg.threshold = 0.0
    dets = gde.predict(DATA / "scene_640.ppm", ["person", "chair"], ws, cfg)
    assert 0 < len(dets) <= 100
    for d in dets:
        assert d["category"] in {"person", "chair"}
        assert 0.0 <= d["score"] <= 1.0
        x, y, w, h = d["bbox"]
        assert x >= 0 and y >= 0 and x + w <= 640 + 1e-9 and y + h <= 640 + 1e-9


def test_flops_and_cli():
    cfg = small_config()
    rep = gde.count_flops(cfg, gde.init_weights(cfg, 1))
    assert rep["total"] == sum(rep["stages"].values())
    code, out, _ = gde.run_cli(["tokens", "--size", "256"])
    assert code == 0 and "ratio 21" in out
    assert gde.run_cli(["frobnicate"])[0] == 2
