import time

from peerqda.gateway import ChatGateway, ModelConfig, _RateLimiter


def test_token_bucket_spaces_out_bursts():
    limiter = _RateLimiter(per_minute=1200)  # 50ms interval
    started = time.monotonic()
    for _ in range(4):
        limiter.acquire()
    elapsed = time.monotonic() - started
    assert elapsed >= 0.14  # three inter-request gaps


def test_gateway_honors_requests_per_minute():
    config = ModelConfig(model="m", requests_per_minute=1200, max_retries=0)
    gw = ChatGateway(config, transport=lambda m, c: "ok")
    started = time.monotonic()
    for _ in range(3):
        gw.complete([{"role": "user", "content": "x"}])
    assert time.monotonic() - started >= 0.09


def test_unlimited_by_default():
    gw = ChatGateway(ModelConfig(model="m"), transport=lambda m, c: "ok")
    started = time.monotonic()
    for _ in range(20):
        gw.complete([{"role": "user", "content": "x"}])
    assert time.monotonic() - started < 0.5
