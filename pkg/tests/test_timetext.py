import pytest

from transittalk.timetext import (
    find_time_mentions,
    format_clock,
    parse_clock_text,
    parse_gtfs_time,
)


@pytest.mark.parametrize(
    "text,expected",
    [
        ("07:00:00", 25200),
        ("7:00:00", 25200),
        ("08:55", 32100),
        ("25:10:00", 90600),  # post-midnight service
        ("", None),
        ("7:99:00", None),
        ("noonish", None),
    ],
)
def test_parse_gtfs_time(text, expected):
    assert parse_gtfs_time(text) == expected


@pytest.mark.parametrize(
    "text,expected",
    [
        ("08:00", 28800),
        ("8:30 pm", 73800),  # 20:30
        ("8am", 28800),
        ("12am", 0),
        ("12pm", 43200),
        ("morning", 28800),
        ("noon", 43200),
        ("evening", 64800),
        ("tomorrow", None),
        ("sometime", None),
    ],
)
def test_parse_clock_text(text, expected):
    assert parse_clock_text(text) == expected


def test_format_clock():
    assert format_clock(28500) == "07:55"
    assert format_clock(0) == "00:00"
    assert format_clock(90600) == "25:10"


def test_find_time_mentions_explicit_and_vague():
    mentions = find_time_mentions("I want to leave tomorrow morning, maybe at 8")
    assert mentions[28800] == "stated"  # "at 8" beats "morning"

    mentions = find_time_mentions("sometime in the evening please")
    assert mentions == {64800: "inferred"}

    mentions = find_time_mentions("the 8:30 pm train")
    assert mentions == {20 * 3600 + 30 * 60: "stated"}


def test_find_time_mentions_ignores_noise():
    assert find_time_mentions("platform 12 is closed") == {}
