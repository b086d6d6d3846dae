import json

import pytest

from ragprobe.gateway import (
    PROFILES,
    ChatGateway,
    GatewayError,
    SamplingParams,
    ScriptedTransport,
    TranscriptStore,
    TransportError,
    request_key,
)


def gateway(responses=None, handler=None, **kwargs):
    return ChatGateway(transport=ScriptedTransport(responses, handler=handler), **kwargs)


def test_profiles_sampling_parameters():
    assert PROFILES["primary"].temperature == 0.8
    assert PROFILES["open_model"].temperature == 1.0
    assert PROFILES["open_model"].top_p == 0.9
    assert PROFILES["deterministic"].temperature == 0.0
    assert PROFILES["primary"].max_tokens == 2048


def test_sampling_params_validation():
    with pytest.raises(ValueError):
        SamplingParams(temperature=-0.1)
    with pytest.raises(ValueError):
        SamplingParams(top_p=1.5)
    with pytest.raises(ValueError):
        SamplingParams(max_tokens=0)


def test_request_key_depends_on_prompt_and_params():
    p = PROFILES["primary"]
    assert request_key("a", p) == request_key("a", p)
    assert request_key("a", p) != request_key("b", p)
    assert request_key("a", p) != request_key("a", PROFILES["deterministic"])


def test_exchange_persisted_before_return():
    gw = gateway(["hello"])
    exchange = gw.complete("hi", PROFILES["deterministic"])
    key = request_key("hi", PROFILES["deterministic"])
    recorded = gw.store.recorded(key)
    assert len(recorded) == 1
    assert recorded[0]["response_text"] == "hello"
    assert recorded[0]["exchange_id"] == exchange.exchange_id


def test_validation_resampling_increments_attempt():
    gw = gateway(["", "   ", "finally text"])
    exchange = gw.complete_validated("q", PROFILES["deterministic"], "nonempty")
    assert exchange.response_text == "finally text"
    assert exchange.attempt == 3


def test_validation_exhaustion_raises_with_last_output():
    gw = gateway(["", "", ""])
    with pytest.raises(GatewayError) as exc:
        gw.complete_validated("q", PROFILES["deterministic"], "nonempty")
    assert exc.value.last_output == ""
    # every failed attempt is still on the record
    assert len(gw.store.recorded(request_key("q", PROFILES["deterministic"]))) == 3


def test_unknown_validator_raises():
    with pytest.raises(GatewayError, match="unknown validator"):
        gateway(["x"]).complete_validated("q", PROFILES["primary"], "nope")


def test_transport_failures_do_not_increment_attempt():
    # endpoint fails twice, then succeeds: still attempt 1, three network calls
    gw = gateway([TransportError("down"), TransportError("down"), "ok"])
    exchange = gw.complete_validated("q", PROFILES["deterministic"], "nonempty")
    assert exchange.attempt == 1
    assert exchange.response_text == "ok"
    assert gw.network_calls == 3


def test_transport_retries_capped():
    gw = gateway([TransportError("down")] * 10)
    with pytest.raises(GatewayError, match="5 times"):
        gw.complete("q", PROFILES["deterministic"])
    assert gw.network_calls == 5


def test_replay_serves_recorded_exchanges_without_network(tmp_path):
    path = tmp_path / "transcripts.jsonl"
    live = gateway(["first", "second"], store=TranscriptStore(path))
    a = live.complete("q", PROFILES["primary"])
    b = live.complete("q", PROFILES["primary"])

    replayed = ChatGateway(transport=None, store=TranscriptStore(path), replay=True)
    ra = replayed.complete("q", PROFILES["primary"])
    rb = replayed.complete("q", PROFILES["primary"])
    assert (ra.response_text, rb.response_text) == ("first", "second")
    assert (ra.exchange_id, rb.exchange_id) == (a.exchange_id, b.exchange_id)
    assert replayed.network_calls == 0
    with pytest.raises(GatewayError, match="replay miss"):
        replayed.complete("q", PROFILES["primary"])


def test_replay_miss_on_unseen_prompt():
    gw = ChatGateway(transport=None, replay=True)
    with pytest.raises(GatewayError, match="replay miss"):
        gw.complete("never seen", PROFILES["primary"])


def test_transcript_store_round_trip(tmp_path):
    path = tmp_path / "t.jsonl"
    gw = gateway(["resp"], store=TranscriptStore(path))
    gw.complete("p", PROFILES["deterministic"])
    lines = path.read_text().splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert rec["response_text"] == "resp"
    assert rec["key"] == request_key("p", PROFILES["deterministic"])


def test_yes_no_and_option_validators():
    gw = gateway(["maybe", "Yes."])
    assert gw.complete_validated("q", PROFILES["deterministic"], "yes_no_token").attempt == 2
    gw = gateway(["hmm", "The final answer is (B)."])
    out = gw.complete_validated("q", PROFILES["primary"], "option_letter_parseable")
    assert out.attempt == 2
