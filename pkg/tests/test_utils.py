"""Tests for seeded stream derivation, atomic writes and the output-directory lock."""

import numpy as np
import pytest

from src.back.constants import LOCK_FILE
from src.back.errors import InputError, OutDirLockedError
from src.back.utils import OutDirLock, Stream, derive_rng, iter_jsonl, write_jsonl


def _draws(*args):
    return tuple(derive_rng(*args).random(5))


class TestDeriveRng:
    def test_same_key_same_stream(self):
        np.testing.assert_array_equal(_draws(4, Stream.DROPOUT, 2, 7), _draws(4, Stream.DROPOUT, 2, 7))

    @pytest.mark.parametrize("a, b", [
        ((0, Stream.MODEL_INIT), (0, Stream.DROPOUT, 0, 1)),
        ((0, Stream.SPLIT), (0, Stream.SHUFFLE, 0)),
        ((0, Stream.SHUFFLE, 3), (0, Stream.DROPOUT, 3, 0)),
        ((0, Stream.SHUFFLE, 0), (0, Stream.SYNTH, 0)),
        ((0, Stream.SPLIT), (0, Stream.THRESHOLD_SPLIT)),
        ((1, Stream.SYNTH, 0), (0, Stream.SYNTH, 1)),
    ])
    def test_distinct_steps_do_not_share_streams(self, a, b):
        assert _draws(*a) != _draws(*b)

    def test_every_stream_of_a_run_is_unique(self):
        keys = [(stream, first, second) for stream in Stream for first in range(4) for second in range(4)]
        draws = {_draws(0, *key) for key in keys}
        assert len(draws) == len(keys)

    def test_large_seed_is_not_a_key(self):
        assert _draws(1 << 32, Stream.SPLIT) != _draws(0, Stream.SPLIT, 1)

    @pytest.mark.parametrize("first", [-1, 1 << 32])
    def test_key_out_of_range(self, first):
        with pytest.raises(InputError):
            derive_rng(0, Stream.SHUFFLE, first)


class TestOutDirLock:
    def test_released_after_use(self, tmp_path):
        with OutDirLock(str(tmp_path / "run")):
            assert (tmp_path / "run" / LOCK_FILE).exists()
        assert not (tmp_path / "run" / LOCK_FILE).exists()

    def test_second_owner_refused(self, tmp_path):
        with OutDirLock(str(tmp_path)):
            with pytest.raises(OutDirLockedError):
                with OutDirLock(str(tmp_path)):
                    pass


class TestJsonl:
    def test_malformed_lines_are_yielded(self, tmp_path):
        path = tmp_path / "records.jsonl"
        assert write_jsonl(str(path), [{"id": "a"}, {"id": "b"}]) == 2
        path.write_text(path.read_text() + "\n{broken\n")
        items = list(iter_jsonl(str(path)))
        assert [item for _, item in items[:2]] == [{"id": "a"}, {"id": "b"}]
        assert items[2][0] == 4
        assert isinstance(items[2][1], ValueError)
