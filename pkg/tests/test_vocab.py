import numpy as np
import pytest
from django.test import override_settings

from trimask.exceptions import InvalidArgument, SequenceTooLong, StreamExhausted
from trimask.vocab import (
    Modality,
    Sequence,
    TaskKind,
    UnifiedVocab,
    assemble_pair,
    build_vocab,
    get_vocab,
    iter_packed,
    pack_text,
    read_sequences,
    text_window,
    write_sequences,
)


def test_layout(vocab):
    """
    Payload ranges come first, then BOS/EOS/MASK per modality, the task
    tokens and PAD_text.
    """
    assert vocab.range(Modality.TEXT) == range(0, 4)
    assert vocab.range(Modality.IMAGE) == range(4, 7)
    assert vocab.range(Modality.AUDIO) == range(7, 10)
    assert (vocab.bos("text"), vocab.eos("text"), vocab.mask("text")) == (10, 11, 12)
    assert (vocab.bos("image"), vocab.eos("image"), vocab.mask("image")) == (13, 14, 15)
    assert (vocab.bos("audio"), vocab.eos("audio"), vocab.mask("audio")) == (16, 17, 18)
    assert [vocab.task_id(task) for task in TaskKind] == [19, 20, 21]
    assert vocab.pad_id == 22
    assert vocab.size == len(vocab) == 4 + 3 + 3 + 9 + 3 + 1


def test_modality_of(vocab):
    assert vocab.modality_of(5) is Modality.IMAGE
    assert vocab.modality_of(vocab.mask("audio")) is Modality.AUDIO
    assert vocab.modality_of(vocab.task_id("image-text")) is Modality.IMAGE
    assert vocab.modality_of(vocab.pad_id) is Modality.TEXT
    with pytest.raises(InvalidArgument):
        vocab.modality_of(vocab.size)


def test_ranges_are_disjoint(vocab):
    seen = set()
    for modality in Modality:
        ids = set(vocab.range(modality))
        assert not ids & seen
        seen |= ids
    assert not vocab.is_special(sorted(seen)).any()


def test_zero_size_rejected():
    with pytest.raises(InvalidArgument):
        UnifiedVocab(4, 0, 3)


def test_build_vocab_from_mapping():
    assert build_vocab({"text": 4, "image": 3, "audio": 3}) == UnifiedVocab(4, 3, 3)
    with pytest.raises(InvalidArgument):
        build_vocab({"text": 4, "image": 3, "video": 3})


def test_json_roundtrip(vocab):
    assert UnifiedVocab.from_json(vocab.to_json()) == vocab
    document = vocab.to_json()
    document["special"]["pad_text"] = 0
    with pytest.raises(InvalidArgument):
        UnifiedVocab.from_json(document)


def test_get_vocab_follows_settings(vocab):
    assert get_vocab() == vocab
    with override_settings(TRIMASK_VOCAB={"text": 8, "image": 2, "audio": 2}):
        assert get_vocab() == UnifiedVocab(8, 2, 2)


def test_assemble_pair(vocab):
    sequence = assemble_pair(vocab, "image-text", [4, 6], [1, 2, 3], 12)
    assert sequence.to_list() == [20, 13, 4, 6, 14, 10, 1, 2, 3, 11, 22, 22]
    assert sequence.maskable_positions.tolist() == [2, 3, 6, 7, 8]
    assert sequence.modality.tolist() == [1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
    assert sequence.attention_mask.tolist() == [True] * 10 + [False] * 2
    assert sequence.mask_tokens[2] == vocab.mask("image")
    assert sequence.mask_tokens[6] == vocab.mask("text")


def test_assemble_pair_boundaries_maskable(vocab):
    sequence = assemble_pair(vocab, "audio-text", [7], [0], 8, boundaries_maskable=True)
    assert sequence.maskable_positions.tolist() == [1, 2, 3, 4, 5, 6]


def test_assemble_pair_too_long(vocab):
    with pytest.raises(SequenceTooLong) as info:
        assemble_pair(vocab, "image-text", [4, 5, 6], [0, 1], 9)
    assert (info.value.required, info.value.limit) == (10, 9)


def test_assemble_pair_rejects_foreign_ids(vocab):
    with pytest.raises(InvalidArgument):
        assemble_pair(vocab, "image-text", [0], [1], 12)
    with pytest.raises(InvalidArgument):
        assemble_pair(vocab, "text", [0], [1], 12)


def test_from_tokens_rebuilds_masks(vocab):
    sequence = assemble_pair(vocab, "audio-text", [7, 8], [3], 10)
    rebuilt = Sequence.from_tokens(vocab, sequence.tokens)
    assert rebuilt == sequence
    assert rebuilt.task is TaskKind.AUDIO_TEXT
    assert np.array_equal(rebuilt.modality, sequence.modality)


def test_pack_text(vocab):
    stream = iter([0, 1, 2, 11, 3, 3])
    sequence = pack_text(stream, 5, vocab)
    assert sequence.to_list() == [19, 0, 1, 2, 11]
    assert sequence.maskable.tolist() == [False, True, True, True, True]
    assert not sequence.pad_positions.any()
    with pytest.raises(InvalidArgument):
        pack_text(stream, 5, vocab)


def test_iter_packed_drops_partial_chunk(vocab):
    packed = list(iter_packed([[0, 1], [2, 3, 0]], 4, vocab))
    # stream: 0 1 EOS 2 3 0 EOS -> two full chunks of three, one token left over
    assert [sequence.to_list() for sequence in packed] == [[19, 0, 1, 11], [19, 2, 3, 0]]


def test_pack_text_end_of_stream(vocab):
    with pytest.raises(StreamExhausted) as info:
        pack_text(iter([0, 1]), 5, vocab)
    assert (info.value.taken, info.value.wanted) == (2, 4)
    with pytest.raises(InvalidArgument, match="empty"):
        pack_text([], 5, vocab)


def test_iter_packed_reports_bad_ids(vocab):
    # an image id in a text document is an error, not the end of the stream
    with pytest.raises(InvalidArgument) as info:
        list(iter_packed([[0, 1, 2], [5, 1, 2]], 4, vocab))
    assert not isinstance(info.value, StreamExhausted)


def test_packed_sequences_roundtrip_from_tokens(vocab):
    sequence = pack_text([0, 11, 1, 2], 5, vocab)
    rebuilt = Sequence.from_tokens(vocab, sequence.tokens)
    assert rebuilt == sequence


def test_text_window(vocab, rng):
    sequence = text_window([0, 1, 2], 9, vocab, rng)
    assert len(sequence) == 9
    assert sequence.tokens[0] == vocab.task_id("text")
    assert set(sequence.tokens[1:].tolist()) <= {0, 1, 2, 11}


def test_sequence_files(tmp_path, vocab):
    sequences = [
        assemble_pair(vocab, "image-text", [4], [0, 1], 10),
        pack_text([0, 1, 2, 3, 0, 1, 2, 3, 0], 10, vocab),
    ]
    path = tmp_path / "sequences.jsonl"
    write_sequences(path, sequences)
    assert read_sequences(path, vocab) == sequences
