"""Delimited localization reports and rendered figures."""

from __future__ import annotations

import numpy as np

from logmilp.evaluation import LocalizationResult
from logmilp.report import (
    LOCALIZE_HEADER,
    localization_rows,
    save_drop_bars,
    save_score_histogram,
    save_training_curves,
    write_localization_tsv,
)
from logmilp.training import EpochReport

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _result(bag_index, drop, p_orig=0.9):
    return LocalizationResult(
        bag_index=bag_index,
        k_star=1,
        s_top=[1, 4, 0],
        attention=[0.5, 0.25, 0.25],
        p_orig=p_orig,
        p_pert=p_orig - drop,
    )


def test_rows_sorted_by_descending_drop_then_bag_index():
    results = [_result(3, 0.2), _result(0, 0.7), _result(1, 0.7), _result(2, 0.4)]
    rows = localization_rows(results)
    order = [int(row.split("\t")[0]) for row in rows]
    assert order == [0, 1, 2, 3]


def test_row_formatting():
    row = localization_rows([_result(5, 0.25)])[0]
    fields = row.split("\t")
    assert fields == ["5", "1", "1;4;0", "0.500000;0.250000;0.250000", "0.900000", "0.650000", "0.250000"]


def test_tsv_file_has_header(tmp_path):
    path = tmp_path / "loc.tsv"
    write_localization_tsv([_result(0, 0.3), _result(1, 0.6)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == LOCALIZE_HEADER
    assert len(lines) == 3
    assert lines[1].startswith("1\t")


def test_tsv_empty_results_is_header_only(tmp_path):
    path = tmp_path / "loc.tsv"
    write_localization_tsv([], path)
    assert path.read_text() == LOCALIZE_HEADER + "\n"


def test_training_curves_png(tmp_path):
    history = [
        EpochReport(
            epoch=e,
            l_cls=0.5 / (e + 1),
            l_proto=0.1,
            l_attn=0.2,
            l_con=0.05,
            l_total=0.9 / (e + 1),
            n_bags=40,
            n_pos=8,
            wall_time=0.1,
        )
        for e in range(4)
    ]
    path = tmp_path / "curves.png"
    save_training_curves(history, [0.2, 0.5, 0.8, 0.9], path)
    assert path.read_bytes().startswith(PNG_MAGIC)


def test_score_histogram_png(tmp_path):
    rng = np.random.default_rng(0)
    scores = rng.uniform(size=60)
    labels = (scores > 0.5).astype(np.int64)
    path = tmp_path / "hist.png"
    save_score_histogram(scores, labels, tau=0.5, path=path)
    assert path.read_bytes().startswith(PNG_MAGIC)


def test_drop_bars_png(tmp_path):
    results = [_result(i, 0.1 + 0.02 * i) for i in range(30)]
    path = tmp_path / "drops.png"
    save_drop_bars(results, path)
    assert path.read_bytes().startswith(PNG_MAGIC)


def test_drop_bars_empty_results(tmp_path):
    path = tmp_path / "drops.png"
    save_drop_bars([], path)
    assert path.read_bytes().startswith(PNG_MAGIC)
