"""Round bands, Welch deltas, Spearman, masking and sentiment scoring."""

from __future__ import annotations

import math
import random
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from pgg_harness.analysis import (
    KNOWN_MODEL_NAMES,
    average_ranks,
    delta_table,
    format_delta,
    mask_reasoning,
    parse_score,
    per_game_means,
    per_round_stats,
    score_batch,
    score_sentiment,
    sentiment_correlation,
    spearman,
    welch_t_test,
)
from pgg_harness.errors import InsufficientData, JudgeUnparseable, ShapeMismatch, ValidationError
from pgg_harness.gateway import Gateway

from helpers import batch_from, cell, constant_batch


class TestRoundStats:
    def test_two_games(self):
        b = batch_from(cell(), [[[0, 5]], [[10, 5]]])
        s = per_round_stats(b, 0)
        assert s.rows[0].mean == 5.0
        # s = sqrt(50), s / sqrt(2) = 5
        assert s.rows[0].ci_half == pytest.approx(9.8, abs=1e-12)
        assert per_round_stats(b, 1).rows[0].ci_half == 0.0

    def test_labels(self):
        s = per_round_stats(batch_from(cell(condition="Name"), [[[1, 2]]] * 2), 1)
        assert (s.player_label, s.condition, s.cell) == ("Beta", "Name", "NN")

    def test_needs_two_games(self):
        with pytest.raises(InsufficientData):
            per_round_stats(batch_from(cell(), [[[1, 2]]]), 0)

    def test_bootstrap_zero_variance(self):
        s = per_round_stats(constant_batch(cell(), 4, games=10, rounds=3), 0, method="bootstrap")
        assert [r.ci_half for r in s.rows] == [0.0] * 3

    def test_bootstrap_close_to_normal(self):
        rng = random.Random(3)
        games = [[[rng.randint(0, 10), 0]] for _ in range(400)]
        b = batch_from(cell(), games)
        normal = per_round_stats(b, 0).rows[0].ci_half
        boot = per_round_stats(b, 0, method="bootstrap", seed=1).rows[0].ci_half
        assert boot == pytest.approx(normal, rel=0.1)

    def test_matches_numpy(self):
        rng = random.Random(0)
        games = [[[rng.randint(0, 10), rng.randint(0, 10)] for _ in range(4)] for _ in range(30)]
        s = per_round_stats(batch_from(cell(), games), 1)
        col = np.array([g[2][1] for g in games], dtype=float)
        assert s.rows[2].mean == pytest.approx(col.mean())
        assert s.rows[2].ci_half == pytest.approx(1.96 * col.std(ddof=1) / math.sqrt(30))


samples = st.lists(st.integers(0, 10), min_size=2, max_size=40)


class TestWelch:
    @pytest.mark.filterwarnings("ignore:Precision loss:RuntimeWarning")
    @settings(max_examples=200, deadline=None)
    @given(samples, samples)
    def test_matches_scipy(self, a, b):
        ours = welch_t_test(a, b)
        if np.var(a) == 0 and np.var(b) == 0:
            assert ours.p_value == (1.0 if np.mean(a) == np.mean(b) else 0.0)
            return
        ref = sps.ttest_ind(a, b, equal_var=False)
        assert ours.t == pytest.approx(ref.statistic, rel=1e-9, abs=1e-12)
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-15)

    def test_needs_two(self):
        with pytest.raises(InsufficientData):
            welch_t_test([1], [1, 2])

    @settings(max_examples=100, deadline=None)
    @given(samples, samples, st.floats(1.0, 10.0))
    def test_more_spread_never_more_significant(self, a, b, k):
        a, b = np.array(a, float), np.array(b, float)
        wider = welch_t_test(a.mean() + k * (a - a.mean()), b.mean() + k * (b - b.mean()))
        assert wider.p_value >= welch_t_test(a, b).p_value - 1e-12


class TestDelta:
    def test_all_six_vs_all_ten(self):
        c6, c10 = cell("Name", "CS"), cell("NoName", "CS")
        rows = delta_table(constant_batch(c6, 6), constant_batch(c10, 10))
        assert [r.delta_mean for r in rows] == [-4.0, -4.0]
        assert all(r.significant and r.p_value == 0.0 for r in rows)
        assert (rows[0].n_name, rows[0].n_noname) == (50, 50)
        assert format_delta(rows[0]) == "**-4.000**"

    def test_antisymmetric(self):
        rng = random.Random(8)
        games = lambda: [[[rng.randint(0, 10), rng.randint(0, 10)] for _ in range(5)] for _ in range(20)]
        name, noname = batch_from(cell("Name"), games()), batch_from(cell("NoName"), games())
        fwd, back = delta_table(name, noname), delta_table(noname, name)
        for f, b in zip(fwd, back):
            assert f.delta_mean == -b.delta_mean
            assert f.p_value == pytest.approx(b.p_value)

    def test_self_comparison_zero(self):
        b = constant_batch(cell(), 7)
        rows = delta_table(b, b)
        assert [(r.delta_mean, r.significant) for r in rows] == [(0.0, False), (0.0, False)]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            delta_table(constant_batch(cell(pairing="CS"), 1), constant_batch(cell(pairing="SC"), 1))

    def test_per_game_unit(self):
        b = batch_from(cell(), [[[0, 0], [10, 0]], [[4, 0], [4, 0]]])
        assert per_game_means(b.transcripts, 0) == [5, 4]

    def test_row_label_and_format(self):
        rows = delta_table(constant_batch(cell(), 5, games=3), constant_batch(cell(), 5, games=3))
        assert rows[0].row_label == "Study 1, Alpha"
        assert format_delta(rows[0]) == "0.000"


def brute_spearman(xs, ys):
    """Average ranks by counting, then Pearson on the ranks."""
    def ranks(v):
        return [1 + sum(w < x for w in v) + (sum(w == x for w in v) - 1) / 2 for x in v]
    rx, ry = np.array(ranks(xs)), np.array(ranks(ys))
    dx, dy = rx - rx.mean(), ry - ry.mean()
    den = math.sqrt((dx @ dx) * (dy @ dy))
    return None if den == 0 else float(dx @ dy / den)


class TestSpearman:
    def test_monotone(self):
        assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0
        assert spearman([1, 2, 3, 4], [9, 7, 5, 1]) == -1.0

    def test_ties_average(self):
        assert average_ranks([3, 1, 3, 2]) == [3.5, 1, 3.5, 2]

    def test_no_variance(self):
        assert spearman([1, 1, 1], [1, 2, 3]) is None

    def test_errors(self):
        with pytest.raises(ValueError):
            spearman([1, 2], [1])
        with pytest.raises(InsufficientData):
            spearman([1], [1])

    @settings(max_examples=300, deadline=None)
    @given(st.integers(2, 30).flatmap(lambda n: st.tuples(
        st.lists(st.integers(0, 5), min_size=n, max_size=n),
        st.lists(st.floats(0, 1, allow_nan=False), min_size=n, max_size=n))))
    def test_against_brute_force(self, pair):
        xs, ys = pair
        got, want = spearman(xs, ys), brute_spearman(xs, ys)
        if want is None:
            assert got is None
        else:
            assert got == pytest.approx(want, abs=1e-12)
            ref = sps.spearmanr(xs, ys).statistic
            assert got == pytest.approx(ref, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 10), min_size=3, max_size=20), st.randoms())
    def test_symmetric_and_bounded(self, xs, rnd):
        ys = list(xs)
        rnd.shuffle(ys)
        r = spearman(xs, ys)
        assert r == spearman(ys, xs)
        assert r is None or -1.0 <= r <= 1.0


MASK_CASES = [
    ("GPT-4o has contributed 10 every round.", ["GPT-4o"],
     "the other player has contributed 10 every round."),
    ("I trust Llama 4 Maverick; the AI seems fair.", [],
     "I trust the other player; the seems fair."),
    ("Playing against claude sonnet 4 again. Other AIs may defect.", ["Sonnet 4"],
     "Playing against the other player again. Other may defect."),
    ("As an AI model I prefer cooperation. Qwen3 agrees.", [],
     "As an I prefer cooperation. the other player agrees."),
    ("The models in this game (Llama 4) contribute.", [],
     "The in this game (the other player) contribute."),
    ("MAIN concern: AIR quality and Modelling.", [], "MAIN concern: AIR quality and Modelling."),
    ("Sonnet 4 vs. Claude Sonnet 4", ["Claude Sonnet 4"], "the other player vs. the other player"),
]


class TestMasking:
    @pytest.mark.parametrize("text, names, expected", MASK_CASES)
    def test_golden(self, text, names, expected):
        assert mask_reasoning(text, names) == expected

    @pytest.mark.parametrize("text, names, expected", MASK_CASES)
    def test_no_leftovers(self, text, names, expected):
        out = mask_reasoning(text, names)
        for name in list(names) + list(KNOWN_MODEL_NAMES):
            assert not re.search(rf"(?<!\w){re.escape(name)}(?!\w)", out, re.I)
        assert not re.search(r"(?<!\w)(AIs?|models?)(?!\w)", out, re.I)

    @settings(max_examples=300)
    @given(st.lists(st.sampled_from(
        ["GPT-4o", "AI", "ai", "model", "Models", "AIs", "Sonnet", "4", "Llama", "the", "other",
         "player", "  ", "\n", ",", ".", "-", "Qwen3", "cooperate", "A", "I", "Bot"]), max_size=30),
        st.sampled_from([[], ["Bot"], ["Mo del"], ["A I"]]))
    def test_idempotent(self, words, names):
        text = " ".join(words)
        once = mask_reasoning(text, names)
        assert mask_reasoning(once, names) == once

    def test_name_inside_replacement_is_skipped(self):
        assert mask_reasoning("Player one", ["player"], include_known=False) == "Player one"


class Judge:
    def __init__(self, *replies):
        self.replies = list(replies)
        self.requests = []

    def send(self, request, timeout):
        self.requests.append(request)
        return self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]


class TestSentiment:
    def test_score(self):
        j = Judge("0.8")
        rec = score_sentiment("We should both give 10.", Gateway(j))
        assert rec.score == 0.8
        assert j.requests[0].temperature == 0.1

    def test_reprompt_then_give_up(self):
        j = Judge("1.4")
        with pytest.raises(JudgeUnparseable):
            score_sentiment("text", Gateway(j), retries=2)
        assert len(j.requests) == 3
        assert j.requests[-1].messages[-1][1].startswith("Reply with only")

    def test_recovers(self):
        assert score_sentiment("text", Gateway(Judge("cooperative", " .25 "))).score == 0.25

    def test_unmasked_rejected(self):
        with pytest.raises(ValidationError):
            score_sentiment("GPT-4o is nice", Gateway(Judge("0.5")))

    @pytest.mark.parametrize("reply, want", [("0", 0.0), ("1", 1.0), ("1.0", 1.0), ("0.55", 0.55),
                                             ("-0.1", None), ("1.01", None), ("0.5 because", None), ("", None)])
    def test_parse_score(self, reply, want):
        assert parse_score(reply) == want

    def test_batch_of_five(self):
        texts = [[["I will give a lot because Beta is fair.", None]] for _ in range(5)]
        b = batch_from(cell(), [[[9, 0]]] * 5, texts)
        j = Judge("0.9")
        records = score_batch(b, Gateway(j))
        assert len(records) == 5 and {r.score for r in records} == {0.9}
        assert all("Beta" not in r.masked_text and "Beta" in r.raw_text for r in records)
        assert [r.game_id for r in records] == [f"{b.cell.slug}#{i}" for i in range(5)]

    def test_correlation_modes(self):
        contribs = [[[c, 5], [c + 1, 5]] for c in range(5)]
        why = [[[f"give {c}", "same"], [f"give {c + 1}", "same"]] for c in range(5)]
        b = batch_from(cell(), contribs, why)

        class ByText:
            def send(self, request, timeout):
                words = request.messages[-1][1].split()
                return str(int(words[-1]) / 10) if words[0] == "give" else "0.5"

        records = score_batch(b, Gateway(ByText()))
        raw = sentiment_correlation(b, records)
        assert raw[0].rho == 1.0 and raw[0].n == 10
        assert raw[1].rho is None
        averaged = sentiment_correlation(b, records, mode="averaged")
        assert averaged[0].n == 2 and averaged[0].rho == 1.0
