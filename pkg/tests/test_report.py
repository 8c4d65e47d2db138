import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from asrcurate.errors import DataError, EmptyReferenceError
from asrcurate.metrics import edit_distance
from asrcurate.report import corpus_stats, evaluate, parse_report_csv

TABLE1_STAGE1 = {"svt": 18468, "smdb": 8629, "youtube": 7164, "riksdag": 21949, "dialects": 54, "nst": 250}
TABLE1_STAGE2 = {"svt": 688, "smdb": 421, "youtube": 2001, "riksdag": 5119, "dialects": 54, "nst": 250}


def hour_fixture(per_dataset, stage, pieces=3):
    decisions, durations = [], {}
    for ds, hours in per_dataset.items():
        for i in range(pieces):
            cid = f"{ds}-{stage}-{i}"
            decisions.append({"chunk_id": cid, "dataset": ds, "stage": stage})
            durations[cid] = hours * 3600 / pieces
    return decisions, durations


def table1_fixture():
    d1, dur1 = hour_fixture(TABLE1_STAGE1, "stage1")
    d2, dur2 = hour_fixture(TABLE1_STAGE2, "stage2")
    return d1 + d2, {**dur1, **dur2}


def test_table1_totals():
    decisions, durations = table1_fixture()
    stats = corpus_stats(decisions, durations)
    assert stats.totals["stage1"] == pytest.approx(56514, abs=1e-6)
    assert stats.totals["stage2"] == pytest.approx(8533, abs=1e-6)
    assert stats.get("riksdag", "stage2") == pytest.approx(5119, abs=1e-6)
    assert sum(stats.get(d, "stage1") for d in stats.datasets) == pytest.approx(stats.totals["stage1"], abs=1e-6)


def test_inclusive_view():
    decisions, durations = table1_fixture()
    stats = corpus_stats(decisions, durations, inclusive_stage1=True)
    assert stats.totals["stage1"] == pytest.approx(56514 + 8533, abs=1e-6)
    assert stats.combined()["nst"] == pytest.approx(500, abs=1e-6)
    disjoint = corpus_stats(decisions, durations)
    assert disjoint.combined()["nst"] == pytest.approx(500, abs=1e-6)


def test_empty_and_orphans():
    stats = corpus_stats([], {})
    assert stats.totals == {"stage1": 0.0, "stage2": 0.0} and stats.hours == {}
    with pytest.raises(DataError):
        corpus_stats([{"chunk_id": "x", "dataset": "svt", "stage": "stage1"}], {})


def test_rejected_and_nonspeech_rows():
    decisions = [
        {"chunk_id": "a", "dataset": "svt", "stage": "rejected"},
        {"chunk_id": "b", "dataset": "svt", "stage": "stage1", "is_nonspeech": True},
        {"chunk_id": "c", "dataset": "svt", "stage": "stage2"},
    ]
    stats = corpus_stats(decisions, {"a": 3600, "b": 1800, "c": 7200})
    assert stats.totals == {"stage1": 0.0, "stage2": 2.0}
    assert stats.nonspeech_hours == 0.5


def test_stats_render():
    decisions, durations = table1_fixture()
    text = corpus_stats(decisions, durations).render_text()
    assert "56514.0" in text and "8533.0" in text


def test_permutation_invariant():
    decisions, durations = table1_fixture()
    durations = {k: v + random.Random(k).random() for k, v in durations.items()}
    base = corpus_stats(decisions, durations)
    for seed in range(5):
        shuffled = decisions[:]
        random.Random(seed).shuffle(shuffled)
        other = corpus_stats(shuffled, durations)
        assert other.hours == base.hours and other.totals == base.totals


# --- evaluation ------------------------------------------------------------

def pair(ref, hyp, test_set="fleurs", system="ft-small"):
    return {"test_set": test_set, "system": system, "reference": ref, "hypothesis": hyp}


def test_eval_perfect():
    report = evaluate([pair("det är bra", "det är bra"), pair("hej då", "hej då")])
    (row,) = report.rows
    assert row.wer == 0.0 and row.bleu == 100.0 and row.utterances == 2 and row.ref_words == 5


def test_eval_pooled_wer():
    report = evaluate([pair("det är bra", "det var bra"), pair("hej då", "hej då")])
    assert report.rows[0].wer == pytest.approx(20.0)


def test_eval_empty_reference_names_pair():
    with pytest.raises(EmptyReferenceError, match="pair 1"):
        evaluate([pair("a", "a"), pair("  ", "b", test_set="cv")])


def test_eval_rendering_rows_and_columns():
    pairs = [pair("a b c", "a b c", t, s) for t in ("cv", "fleurs", "nst") for s in ("whisper", "ours")]
    report = evaluate(pairs)
    csv_text = report.render_csv()
    lines = csv_text.strip().splitlines()
    assert lines[0].split(",")[:4] == ["test_set", "system", "wer", "bleu"]
    assert len(lines) == 7
    text_lines = report.render_text().strip().splitlines()
    assert len(text_lines) == 7


@st.composite
def eval_pairs(draw):
    vocab = ["a", "b", "c", "d"]
    out = []
    for _ in range(draw(st.integers(1, 12))):
        ref = draw(st.lists(st.sampled_from(vocab), min_size=1, max_size=8))
        hyp = draw(st.lists(st.sampled_from(vocab), max_size=8))
        out.append(pair(" ".join(ref), " ".join(hyp), draw(st.sampled_from(["cv", "nst"])),
                        draw(st.sampled_from(["x", "y"]))))
    return out


@given(eval_pairs())
def test_pooled_wer_and_csv_round_trip(pairs):
    report = evaluate(pairs)
    for row in report.rows:
        group = [p for p in pairs if (p["test_set"], p["system"]) == (row.test_set, row.system)]
        edits = sum(edit_distance(p["reference"].split(), p["hypothesis"].split()) for p in group)
        words = sum(len(p["reference"].split()) for p in group)
        assert row.wer == pytest.approx(100 * edits / words, abs=1e-9)
        assert 0 <= row.bleu <= 100
    parsed = parse_report_csv(report.render_csv())
    assert [(r["test_set"], r["system"], r["wer"], r["bleu"]) for r in parsed] == [
        (r.test_set, r.system, round(r.wer, 1), round(r.bleu, 1)) for r in report.rows
    ]


def test_eval_workers_match_serial():
    pairs = [pair(f"a b c {i % 3}", f"a c {i % 2}", system=f"s{i % 2}") for i in range(40)]
    assert evaluate(pairs).rows == evaluate(pairs, workers=2).rows
