import logging

import pytest

from recovera.logs import ENV_VAR, resolve_level


@pytest.mark.parametrize(
    "flag, environ, expected",
    [
        (None, {}, logging.INFO),
        (None, {ENV_VAR: "debug"}, logging.DEBUG),
        (None, {ENV_VAR: " WARN "}, logging.WARNING),
        ("error", {ENV_VAR: "debug"}, logging.ERROR),
        (None, {ENV_VAR: "chatty"}, logging.INFO),
    ],
)
def test_resolve_level(flag, environ, expected):
    assert resolve_level(flag, environ) == expected
