import json
import sys

import numpy as np
import pytest

from iqattack.image import ImageTensor
from iqattack.oracle import ScoreBounds, builtin_mean_brightness_scorer, builtin_sharpness_scorer
from iqattack.wire import (
    OracleTcpServer,
    OracleTransportError,
    connect_external_oracle,
    decode_tensor,
    encode_tensor,
    handle_request_line,
    handshake_line,
)

from conftest import f32_image

BOUNDS = ScoreBounds(0.0, 10.0)

SERVE = (
    f"cmd:{sys.executable} -m iqattack.cli serve-oracle"
    " --scorer {scorer} --stdio --beta1 0 --beta2 10"
)


def stdio_oracle(scorer="mean-brightness", timeout=30.0):
    return connect_external_oracle(SERVE.format(scorer=scorer), BOUNDS, timeout=timeout)


class TestTensorCodec:
    def test_roundtrip_is_f32_exact(self, rng):
        img = f32_image(rng, 7, 5, 3)
        back = decode_tensor(7, 5, 3, encode_tensor(img))
        assert back == img

    def test_roundtrip_quantizes_to_f32(self):
        # a float64 value off the f32 grid comes back rounded to f32
        img = ImageTensor(np.full((1, 1, 1), 0.1))
        back = decode_tensor(1, 1, 1, encode_tensor(img))
        assert back.array[0, 0, 0] == float(np.float32(0.1))

    def test_length_mismatch(self, rng):
        payload = encode_tensor(f32_image(rng, 4, 4, 3))
        with pytest.raises(ValueError, match="bytes"):
            decode_tensor(5, 4, 3, payload)

    def test_invalid_base64(self):
        with pytest.raises(ValueError, match="base64"):
            decode_tensor(1, 1, 1, "@@@not-base64@@@")


class TestHandshake:
    def test_line_contents(self):
        msg = json.loads(handshake_line(ScoreBounds(1.0, 10.0)))
        assert msg == {"proto": "iqa-oracle/1", "beta1": 1.0, "beta2": 10.0}

    def test_bounds_mismatch_rejected(self):
        with pytest.raises(OracleTransportError, match="bounds"):
            connect_external_oracle(
                SERVE.format(scorer="mean-brightness"), ScoreBounds(1.0, 10.0)
            )


class TestRequestHandling:
    def test_scores_valid_request(self, rng):
        scorer = builtin_mean_brightness_scorer(BOUNDS)
        img = f32_image(rng, 4, 4, 3)
        line = json.dumps(
            {"id": 7, "h": 4, "w": 4, "c": 3, "data_b64": encode_tensor(img)}
        )
        reply = json.loads(handle_request_line(line, scorer))
        assert reply["id"] == 7
        assert reply["score"] == scorer.score(img)

    def test_malformed_json_yields_error(self):
        scorer = builtin_mean_brightness_scorer(BOUNDS)
        reply = json.loads(handle_request_line("{nope", scorer))
        assert reply["id"] == 0
        assert "error" in reply

    def test_truncated_payload_isolated_to_request(self, rng):
        scorer = builtin_mean_brightness_scorer(BOUNDS)
        img = f32_image(rng, 4, 4, 3)
        bad = json.dumps({"id": 3, "h": 8, "w": 8, "c": 3, "data_b64": encode_tensor(img)})
        reply = json.loads(handle_request_line(bad, scorer))
        assert reply["id"] == 3 and "error" in reply
        # the scorer still answers the next well-formed request
        good = json.dumps({"id": 4, "h": 4, "w": 4, "c": 3, "data_b64": encode_tensor(img)})
        assert "score" in json.loads(handle_request_line(good, scorer))

    def test_bad_shape_yields_error(self, rng):
        scorer = builtin_mean_brightness_scorer(BOUNDS)
        line = json.dumps({"id": 9, "h": 0, "w": 4, "c": 3, "data_b64": ""})
        reply = json.loads(handle_request_line(line, scorer))
        assert reply["id"] == 9 and "error" in reply


class TestStdioTransport:
    def test_transparency_mean_brightness(self, rng):
        local = builtin_mean_brightness_scorer(BOUNDS)
        with stdio_oracle("mean-brightness") as remote:
            for _ in range(20):
                img = f32_image(rng, 6, 6, 3)
                assert remote.score(img) == local.score(img)

    def test_transparency_sharpness(self, rng):
        local = builtin_sharpness_scorer(BOUNDS)
        with stdio_oracle("sharpness") as remote:
            for _ in range(20):
                img = f32_image(rng, 6, 6, 3)
                assert remote.score(img) == local.score(img)

    def test_query_counter(self, rng):
        with stdio_oracle() as remote:
            assert remote.queries_used() == 0
            img = f32_image(rng, 4, 4, 3)
            for _ in range(5):
                remote.score(img)
            assert remote.queries_used() == 5

    def test_many_messages_preserve_order(self, rng):
        # scores of 1000 distinct constant images must come back matched to
        # their requests; any ordering slip would misattribute values
        with stdio_oracle() as remote:
            levels = rng.permutation(1000)
            for level in levels:
                v = float(np.float32(level / 1000.0))
                img = ImageTensor(np.full((2, 2, 1), v))
                assert remote.score(img) == 10.0 * np.float64(np.float32(v))

    def test_dead_process_raises_transport_error(self):
        oracle = connect_external_oracle(
            SERVE.format(scorer="mean-brightness"), BOUNDS
        )
        oracle.close()
        with pytest.raises(OracleTransportError):
            oracle.score(ImageTensor(np.full((2, 2, 1), 0.5)))

    def test_unknown_command(self):
        with pytest.raises(OracleTransportError):
            connect_external_oracle("cmd:/no/such/binary-xyz", BOUNDS)


class TestTcpTransport:
    def test_transparency_and_reuse(self, rng):
        local = builtin_sharpness_scorer(BOUNDS)
        with OracleTcpServer(builtin_sharpness_scorer(BOUNDS)) as server:
            host, port = server.address
            with connect_external_oracle(f"tcp:{host}:{port}", BOUNDS) as remote:
                for _ in range(20):
                    img = f32_image(rng, 6, 6, 3)
                    assert remote.score(img) == local.score(img)

    def test_parallel_connections(self, rng):
        local = builtin_mean_brightness_scorer(BOUNDS)
        with OracleTcpServer(builtin_mean_brightness_scorer(BOUNDS)) as server:
            host, port = server.address
            a = connect_external_oracle(f"tcp:{host}:{port}", BOUNDS)
            b = connect_external_oracle(f"tcp:{host}:{port}", BOUNDS)
            try:
                img1 = f32_image(rng, 4, 4, 3)
                img2 = f32_image(rng, 4, 4, 3)
                assert a.score(img1) == local.score(img1)
                assert b.score(img2) == local.score(img2)
                assert a.score(img2) == local.score(img2)
            finally:
                a.close()
                b.close()

    def test_connection_refused(self):
        with pytest.raises(OracleTransportError):
            connect_external_oracle("tcp:127.0.0.1:1", BOUNDS, timeout=2.0)


class TestTransportSpecParsing:
    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            connect_external_oracle("http:example", BOUNDS)

    def test_bad_tcp_spec(self):
        with pytest.raises(ValueError):
            connect_external_oracle("tcp:localhost", BOUNDS)

    def test_empty_command(self):
        with pytest.raises(ValueError):
            connect_external_oracle("cmd:   ", BOUNDS)
