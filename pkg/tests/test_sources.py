"""Source bundles: validation and file loading (JSON bundle, dir, CSV)."""

import json

import pytest

from logboard.sources import (
    Image,
    Passage,
    SourceBundle,
    Table,
    bundle_from_dict,
    bundle_to_dict,
    load_sources,
    load_table_csv,
)


def test_table_must_be_rectangular():
    with pytest.raises(ValueError, match="rectangular"):
        Table("t", ["a", "b"], [["1"]])


def test_duplicate_ids_rejected_per_kind():
    with pytest.raises(ValueError, match="duplicate table"):
        SourceBundle(tables=[Table("t", ["a"], []), Table("t", ["a"], [])])
    with pytest.raises(ValueError, match="duplicate passage"):
        SourceBundle(passages=[Passage("p", "x"), Passage("p", "y")])
    with pytest.raises(ValueError, match="duplicate image"):
        SourceBundle(images=[Image("i"), Image("i")])


def test_bundle_dict_roundtrip():
    bundle = SourceBundle(
        tables=[Table("t", ["h"], [["1"]])],
        passages=[Passage("p", "text")],
        images=[Image("i", caption="c", ocr_text="7 8")],
    )
    again = bundle_from_dict(bundle_to_dict(bundle))
    assert bundle_to_dict(again) == bundle_to_dict(bundle)


def test_load_bundle_file(tmp_path):
    path = tmp_path / "bundle.json"
    path.write_text(
        json.dumps({"tables": [], "passages": [{"id": "p", "text": "hi"}], "images": []}),
        encoding="utf-8",
    )
    bundle = load_sources(path)
    assert bundle.passages[0].id == "p"


def test_load_table_csv(tmp_path):
    path = tmp_path / "revenue.csv"
    path.write_text("Year,Revenue\n2018,$50M\n2019,$55M\n", encoding="utf-8")
    table = load_table_csv(path)
    assert table.id == "revenue"
    assert table.header == ["Year", "Revenue"]
    assert table.rows == [["2018", "$50M"], ["2019", "$55M"]]


def test_load_sources_directory(tmp_path):
    (tmp_path / "revenue.csv").write_text("Year,Revenue\n2018,$50M\n", encoding="utf-8")
    (tmp_path / "tables_extra.json").write_text(
        json.dumps([{"id": "t2", "header": ["k"], "rows": [["v"]]}]), encoding="utf-8"
    )
    (tmp_path / "passages.json").write_text(
        json.dumps([{"id": "p1", "text": "something"}]), encoding="utf-8"
    )
    (tmp_path / "images.json").write_text(
        json.dumps([{"id": "img", "caption": "chart", "ocr_text": "5 6"}]), encoding="utf-8"
    )
    bundle = load_sources(tmp_path)
    assert {t.id for t in bundle.tables} == {"revenue", "t2"}
    assert bundle.passages[0].id == "p1"
    assert bundle.images[0].ocr_text == "5 6"


def test_load_sources_missing_path():
    with pytest.raises(FileNotFoundError):
        load_sources("/nonexistent/path")


def test_empty_csv_rejected(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("", encoding="utf-8")
    with pytest.raises(ValueError, match="empty"):
        load_table_csv(path)
