import re

import numpy as np
import pytest

from phonotraj.alignment import (
    AlignmentError,
    Phone,
    PhoneSegmentation,
    build_featural,
    parse_alignment,
    parse_lab,
    parse_textgrid,
    trim_and_filter,
)
from phonotraj.phonology import encode_target, get_table


def seg(*phones, offset=0.0):
    return PhoneSegmentation("utt", tuple(Phone(*p) for p in phones), offset=offset)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def test_parse_lab_three_phones(tmp_path):
    p = tmp_path / "u.lab"
    p.write_text("0.0 0.5 sil\n0.5 0.9 aa\n0.9 1.4 sil\n", encoding="utf-8")
    s = parse_lab(p)
    assert len(s) == 3
    assert s.phones[1] == Phone("aa", 0.5, 0.9)


def test_parse_lab_rejects_gap(tmp_path):
    p = tmp_path / "g.lab"
    p.write_text("0.0 0.5 sil\n0.6 0.9 aa\n", encoding="utf-8")
    with pytest.raises(AlignmentError, match="contiguous"):
        parse_lab(p)


def test_parse_lab_rejects_inverted_interval(tmp_path):
    p = tmp_path / "i.lab"
    p.write_text("0.0 0.5 sil\n0.5 0.4 aa\n", encoding="utf-8")
    with pytest.raises(AlignmentError):
        parse_lab(p)


LONG_TEXTGRID = """File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 1.4
tiers? <exists>
size = 1
item []:
    item [1]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 1.4
        intervals: size = 3
        intervals [1]:
            xmin = 0
            xmax = 0.5
            text = "sil"
        intervals [2]:
            xmin = 0.5
            xmax = 0.9
            text = "aa"
        intervals [3]:
            xmin = 0.9
            xmax = 1.4
            text = "sil"
"""

SHORT_TEXTGRID = """File type = "ooTextFile"
Object class = "TextGrid"

0
1.4
<exists>
1
"IntervalTier"
"phones"
0
1.4
3
0
0.5
"sil"
0.5
0.9
"aa"
0.9
1.4
"sil"
"""


def _independent_textgrid_read(text):
    """Minimal alternative reader: pull xmin/xmax/text triples in order."""
    triples = re.findall(
        r"xmin\s*=\s*([\d.]+)\s*\n\s*xmax\s*=\s*([\d.]+)\s*\n\s*text\s*=\s*\"([^\"]*)\"",
        text,
    )
    return [(lab, float(a), float(b)) for a, b, lab in triples]


def test_parse_textgrid_long_matches_independent_reader(tmp_path):
    p = tmp_path / "u.TextGrid"
    p.write_text(LONG_TEXTGRID, encoding="utf-8")
    s = parse_textgrid(p)
    expected = _independent_textgrid_read(LONG_TEXTGRID)
    assert [(ph.label, ph.start, ph.end) for ph in s.phones] == expected
    assert len(s) == 3


def test_parse_textgrid_short_form(tmp_path):
    p = tmp_path / "s.TextGrid"
    p.write_text(SHORT_TEXTGRID, encoding="utf-8")
    s = parse_textgrid(p)
    assert [(ph.label, ph.start, ph.end) for ph in s.phones] == [
        ("sil", 0.0, 0.5), ("aa", 0.5, 0.9), ("sil", 0.9, 1.4)
    ]


def test_parse_textgrid_gap_rejected(tmp_path):
    p = tmp_path / "gap.TextGrid"
    p.write_text(LONG_TEXTGRID.replace('xmin = 0.9', 'xmin = 0.95'), encoding="utf-8")
    with pytest.raises(AlignmentError, match="contiguous"):
        parse_textgrid(p)


def test_parse_alignment_dispatches_on_extension(tmp_path):
    lab = tmp_path / "u.lab"
    lab.write_text("0.0 0.5 sil\n0.5 0.9 aa\n0.9 1.0 sil\n", encoding="utf-8")
    tg = tmp_path / "u.TextGrid"
    tg.write_text(LONG_TEXTGRID, encoding="utf-8")
    assert len(parse_alignment(lab)) == 3
    assert len(parse_alignment(tg)) == 3
    with pytest.raises(AlignmentError, match="format"):
        parse_alignment(lab, fmt="elan")


# ---------------------------------------------------------------------------
# trimming
# ---------------------------------------------------------------------------


def test_trim_strips_boundary_silence_and_retimes():
    s = seg(("sil", 0.0, 0.5), ("aa", 0.5, 0.9), ("sil", 0.9, 1.4))
    out = trim_and_filter(s)
    assert out is not None
    assert [(p.label, round(p.start, 9), round(p.end, 9)) for p in out.phones] == [
        ("aa", 0.0, 0.4)
    ]
    assert out.offset == 0.5


def test_trim_rejects_one_sided_silence():
    assert trim_and_filter(seg(("aa", 0.0, 0.4), ("sil", 0.4, 0.8))) is None
    assert trim_and_filter(seg(("sil", 0.0, 0.4), ("aa", 0.4, 0.8))) is None


def test_trim_rejects_all_silence():
    assert trim_and_filter(seg(("sil", 0.0, 0.4), ("sp", 0.4, 0.8))) is None


def test_trim_keeps_internal_silence():
    s = seg(("sil", 0.0, 0.2), ("aa", 0.2, 0.4), ("sp", 0.4, 0.5),
            ("bb", 0.5, 0.8), ("sil", 0.8, 1.0))
    out = trim_and_filter(s)
    assert [p.label for p in out.phones] == ["aa", "sp", "bb"]


def test_trim_strips_silence_runs():
    s = seg(("sil", 0.0, 0.1), ("sp", 0.1, 0.3), ("aa", 0.3, 0.5),
            ("sil", 0.5, 0.6), ("sil", 0.6, 0.9))
    out = trim_and_filter(s)
    assert [p.label for p in out.phones] == ["aa"]
    assert out.offset == pytest.approx(0.3)


def test_trim_is_idempotent():
    s = seg(("sil", 0.0, 0.5), ("aa", 0.5, 0.9), ("ae", 0.9, 1.1), ("sil", 1.1, 1.4))
    once = trim_and_filter(s)
    twice = trim_and_filter(once)
    assert twice is once


# ---------------------------------------------------------------------------
# featural segmentation
# ---------------------------------------------------------------------------

TABLE = get_table("gp_unknown")


def test_build_featural_single_phone():
    out = build_featural(seg(("aa", 0.0, 0.4)), TABLE)
    assert out.num_targets == 1
    np.testing.assert_allclose(out.t, [0.0, 0.2, 0.4])
    np.testing.assert_array_equal(out.X[0], np.zeros(26))
    np.testing.assert_array_equal(out.X[2], np.zeros(26))
    np.testing.assert_array_equal(out.X[1], encode_target(TABLE, "aa"))


def test_build_featural_two_phone_midpoints():
    out = build_featural(seg(("aa", 0.0, 0.2), ("ae", 0.2, 0.6)), TABLE)
    np.testing.assert_allclose(out.t, [0.0, 0.1, 0.4, 0.6])
    np.testing.assert_array_equal(out.Y[0], [0.0, 0.0])
    np.testing.assert_array_equal(out.Y[3], [0.6, 0.6])


def test_build_featural_empty_rejected():
    with pytest.raises(AlignmentError):
        build_featural(PhoneSegmentation("utt", ()), TABLE)


def test_build_featural_unknown_phone_rejected():
    from phonotraj.phonology import FeatureTableError

    with pytest.raises(FeatureTableError):
        build_featural(seg(("qq", 0.0, 0.4)), TABLE)


def test_featural_invariants_on_random_segmentations():
    rng = np.random.default_rng(0)
    inv = [p for p in TABLE.inventory if p != "sil"]
    for _ in range(50):
        k = int(rng.integers(1, 12))
        durs = rng.uniform(0.03, 0.3, size=k)
        bounds = np.concatenate([[0.0], np.cumsum(durs)])
        phones = tuple(
            Phone(inv[int(rng.integers(len(inv)))], bounds[i], bounds[i + 1])
            for i in range(k)
        )
        out = build_featural(PhoneSegmentation("u", phones), TABLE)
        assert out.X.shape[0] == k + 2
        assert np.all(np.diff(out.t) > 0)
        assert out.t[0] == 0.0
        # re-deriving t from Y reproduces t bitwise
        np.testing.assert_array_equal(out.t, out.Y.mean(axis=1))
        np.testing.assert_array_equal(out.t, 0.5 * (out.Y @ np.ones(2)))
