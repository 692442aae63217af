from ecn_lab.experiment import ResultTable, SweepResult
from ecn_lab.metrics import ResultRow
from ecn_lab.plotting import strategy_bar_chart, sweep_plot


def test_bar_chart_is_reproducible(tmp_path):
    table = ResultTable([ResultRow("d", s, "weighted_f1", v, seed) for s, v in (("clean", 0.9), ("ecn_full", 0.8))
                         for seed in (0, 1)])
    strategy_bar_chart(table, tmp_path / "a.svg")
    strategy_bar_chart(table, tmp_path / "b.svg")
    text = (tmp_path / "a.svg").read_text()
    assert "<svg" in text and "ecn_full" in text and "<dc:date>" not in text
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_sweep_plot(tmp_path):
    res = SweepResult("neighbor_radius_k", [(None, "corrupted_only", "m", 0.5, 0), (None, "gold_only", "m", 0.6, 0),
                                            (0, "ecn_y_only", "m", 0.4, 0), (2, "ecn_y_only", "m", 0.7, 0)])
    sweep_plot(res, "m", tmp_path / "s.svg")
    assert "neighbor_radius_k" in (tmp_path / "s.svg").read_text()
