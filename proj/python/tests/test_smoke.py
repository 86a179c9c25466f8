import json
import math

import numpy as np
import pytest

import vgkit


def quadrant():
    return np.array([[1, 0], [0, 0]], dtype=np.uint8)


def test_metrics_worked_examples():
    a = np.array([[0.4, 0.2], [0.2, 0.2]])
    assert vgkit.attention_ratio(a, quadrant()) == pytest.approx(1.6, rel=1e-12)
    s = vgkit.score(np.full((2, 2), 0.25), quadrant())
    assert s["ar"] == pytest.approx(1.0)
    assert s["kl"] == pytest.approx(math.log(4), abs=1e-4)
    assert 0 <= vgkit.js_divergence(a, quadrant()) <= math.log(2)


def test_degenerate_mask_raises():
    with pytest.raises(vgkit.DegenerateInput):
        vgkit.score(np.ones((2, 2)), np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(vgkit.VgkitError):
        vgkit.attention_ratio(np.ones((2, 3)), quadrant())


def test_rasterize_worked_example():
    m = vgkit.rasterize_bbox((100, 100, 150, 150), 336, 336, 24)
    assert m.shape == (24, 24)
    assert m.sum() == 16
    assert m[7:11, 7:11].all()


def test_dump_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.random((3, 2, 4, 4), dtype=np.float32)
    stack = vgkit.AttentionStack(values, vgkit.SourceKind.reference)
    data = vgkit.encode_dump(stack)
    assert data[:4] == b"VGAT"
    assert len(data) == 20 + values.size * 4
    assert vgkit.decode_dump(data) == stack
    vgkit.save_dump(stack, tmp_path / "x.vgat")
    back = vgkit.load_dump(tmp_path / "x.vgat")
    np.testing.assert_array_equal(back.to_numpy(), values)
    assert back.source_kind == vgkit.SourceKind.reference
    with pytest.raises(vgkit.TruncationError):
        vgkit.decode_dump(data[:-1])
    with pytest.raises(vgkit.FormatError):
        vgkit.decode_dump(b"XGAT" + data[4:])


def test_percentile_and_binarize():
    agg = np.array([[0.1, 0.2], [0.3, 0.4]])
    assert vgkit.percentile_threshold(agg.ravel(), 50) == 0.2
    np.testing.assert_array_equal(vgkit.suppress_and_binarize(agg, 50), [[0, 0], [1, 1]])
    with pytest.raises(vgkit.AllSuppressedError):
        vgkit.suppress_and_binarize(np.ones((2, 2)), 50)


def test_fixture_sweep_and_ranking(tmp_path):
    ids = vgkit.synthesize_fixture(tmp_path, seed=3, n_samples=5, grid_n=8, layers=4, heads=4, plant=[(2, 1)])
    assert len(ids) == 5
    samples = vgkit.load_fixture(tmp_path)
    assert [s[0] for s in samples] == ids
    result = vgkit.sweep(samples, per_head=True)
    assert result["sample_count"] == 5
    ranking = vgkit.rank_heads(samples)
    assert len(ranking) == 16
    assert ranking[0][:2] == (2, 1)


def test_toy_model_knockout_is_a_no_op_with_all_ones():
    model = vgkit.ToyModel(layers=3, heads=2, model_dim=8, grid_n=2)
    tokens = model.tokenize("Is there a cat in the image?")
    logits, attention = model.forward(7, tokens)
    assert attention.layers == 3
    same, _ = model.forward(7, tokens, knockout_mask=np.ones((2, 2), dtype=np.uint8), layers=[1])
    np.testing.assert_array_equal(logits, same)
    changed, _ = model.forward(7, tokens, knockout_mask=np.array([[1, 0], [0, 1]], dtype=np.uint8), layers=[1])
    assert not np.array_equal(logits, changed)


def test_cli_round_trip(tmp_path):
    code, _, _ = vgkit.run_cli(["synth", "--out-dir", str(tmp_path / "cal"), "--samples", "3", "--grid", "4"])
    assert code == 0
    code, _, _ = vgkit.run_cli(["analyze", "--data-dir", str(tmp_path / "cal"), "--out-dir", str(tmp_path / "an")])
    assert code == 0
    manifest = json.loads((tmp_path / "an" / "manifest.json").read_text())
    assert manifest["command"] == "analyze"
    assert vgkit.run_cli(["bogus"])[0] == 2
