import pytest
from hypothesis import given
from hypothesis import strategies as st

from shapecorr import prompts
from shapecorr.classify import ClassProposals, majority_vote, propose_classes, unify_classes
from shapecorr.oracle import OracleBackend, OracleError, ReplayOracle
from shapecorr.textnorm import normalize_label


def proposals(texts, shape_id="s"):
    return ClassProposals(shape_id=shape_id, proposals=tuple(enumerate(texts)))


class ChatForbidden(OracleBackend):
    """Backend that fails the test if the chat endpoint is touched."""

    def chat(self, messages):
        raise AssertionError("chat must not be called")


class ScriptedChat(OracleBackend):
    def __init__(self, response):
        self.response = response
        self.calls = 0

    def chat(self, messages):
        self.calls += 1
        return self.response


class TestNormalization:
    def test_strips_article_and_punctuation(self):
        assert normalize_label("Horse.") == "horse"
        assert normalize_label("a gray wolf") == "gray wolf"
        assert normalize_label("The  Cat!") == "cat"

    def test_collapses_whitespace(self):
        assert normalize_label("  big   dog \n") == "big dog"


class TestProposeClasses:
    def test_twelve_ordered_proposals(self, blob_pair, blob_oracle):
        mesh1, _, _ = blob_pair
        props = propose_classes(mesh1, blob_oracle, image_size=64)
        assert len(props.proposals) == 12
        assert [i for i, _ in props.proposals] == list(range(12))
        assert props.texts() == ["apple"] * 12

    def test_failed_view_reported_with_index(self, blob_pair):
        mesh1, _, _ = blob_pair

        class FlakyCaption(OracleBackend):
            def caption(self, view, prompt):
                if view.view_index == 5:
                    raise OracleError("boom")
                return "ok"

        with pytest.raises(OracleError, match="view 5"):
            propose_classes(mesh1, FlakyCaption(), image_size=64)


class TestUnifyClasses:
    def test_single_proposal_short_circuits(self):
        label = unify_classes(proposals(["Horse."]), ChatForbidden())
        assert label.label == "horse"
        assert label.method == "unified"

    def test_unanimity_short_circuits(self):
        label = unify_classes(proposals(["cow"] * 12), ChatForbidden())
        assert label.label == "cow"

    def test_unanimity_after_normalization(self):
        label = unify_classes(proposals(["a cow", "Cow.", "cow"]), ChatForbidden())
        assert label.label == "cow"

    def test_chat_used_for_mixed_proposals(self):
        chat = ScriptedChat("Wolf.")
        label = unify_classes(proposals(["a gray wolf", "dog"]), chat)
        assert label.label == "wolf"
        assert chat.calls == 1

    def test_garbage_response_rejected(self):
        with pytest.raises(OracleError, match="usable"):
            unify_classes(proposals(["cat", "dog"]), ScriptedChat("!!!???"))

    def test_frozen_wolf_fixture(self, data_dir):
        from tests.data.make_chat_fixtures import WOLF_PROPOSALS

        oracle = ReplayOracle(data_dir / "chat_fixtures")
        label = unify_classes(proposals(WOLF_PROPOSALS), oracle)
        assert label.label == "wolf"

    def test_empty_proposals(self):
        with pytest.raises(ValueError):
            unify_classes(proposals([]), ChatForbidden())


class TestMajorityVote:
    def test_plain_majority(self):
        assert majority_vote(proposals(["cat", "cat", "dog"])).label == "cat"

    def test_normalization_merges(self):
        assert majority_vote(proposals(["a cat", "cat"])).label == "cat"

    def test_tie_break_lexicographic(self):
        assert majority_vote(proposals(["ant", "bee"])).label == "ant"

    def test_method_tag(self):
        assert majority_vote(proposals(["x"])).method == "voting"

    @given(st.lists(st.sampled_from(["cat", "a cat", "dog", "The Dog", "bird"]), min_size=1, max_size=12))
    def test_order_independent(self, texts):
        forward = majority_vote(proposals(texts)).label
        assert majority_vote(proposals(list(reversed(texts)))).label == forward
        assert majority_vote(proposals(sorted(texts))).label == forward

    def test_voting_satisfies_label_invariants(self):
        label = majority_vote(proposals(["A   Gray Wolf.", "a gray wolf"]))
        assert label.label == normalize_label(label.label)


def test_prompt_assets_have_placeholders():
    assert "ANSWERS_LIST" not in prompts.unify_prompt(["a", "b"])
    assert "- a\n- b" in prompts.unify_prompt(["a", "b"])
    filled = prompts.regions_prompt("person", "dog")
    assert "Shape 1: person" in filled and "Shape 2: dog" in filled
