import enum
import functools
import itertools
import json
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from .exceptions import InvalidArgument, SequenceTooLong, StreamExhausted

VOCAB_FORMAT_VERSION = 1

# Desk-scale sequence length; the large-scale preset uses 3256.
DEFAULT_SEQUENCE_LENGTH = 64
FULL_SEQUENCE_LENGTH = 3256

DEFAULT_VOCAB_SIZES = {"text": 32, "image": 16, "audio": 16}


class Modality(enum.IntEnum):
    """
    The three modalities. The integer order fixes the id layout.
    """

    TEXT = 0
    IMAGE = 1
    AUDIO = 2

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise InvalidArgument("Unknown modality %r" % (value,))


class TaskKind(enum.Enum):
    TEXT = "text"
    IMAGE_TEXT = "image-text"
    AUDIO_TEXT = "audio-text"

    @property
    def modality(self):
        """
        The modality this task generates (the non-text half of a pair).
        """
        return _TASK_MODALITY[self]

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("_", "-"))
        except ValueError:
            raise InvalidArgument("Unknown task %r" % (value,))

    @classmethod
    def for_modality(cls, modality):
        for task, task_modality in _TASK_MODALITY.items():
            if task_modality == Modality.parse(modality):
                return task


_TASK_MODALITY = {
    TaskKind.TEXT: Modality.TEXT,
    TaskKind.IMAGE_TEXT: Modality.IMAGE,
    TaskKind.AUDIO_TEXT: Modality.AUDIO,
}


class UnifiedVocab:
    """
    Shared token space over the three modalities.

    Ids are assigned deterministically: the text, image and audio payload
    ranges first, then BOS/EOS/MASK for each modality, then one task token per
    task kind, then PAD_text. The total size is therefore
    ``sum(V_m) + 9 + 3 + 1``.
    """

    SPECIAL_KINDS = ("bos", "eos", "mask")

    def __init__(self, text, image, audio):
        sizes = (text, image, audio)
        for modality, size in zip(Modality, sizes):
            if int(size) < 1:
                raise InvalidArgument(
                    "Modality %s needs at least one token, got %r"
                    % (modality.label, size)
                )
        self.sizes = tuple(int(size) for size in sizes)
        self._starts = tuple(itertools.accumulate((0,) + self.sizes[:-1]))
        self.payload_size = sum(self.sizes)
        next_id = self.payload_size
        self._special = {}
        for modality in Modality:
            for kind in self.SPECIAL_KINDS:
                self._special[kind, modality] = next_id
                next_id += 1
        self._task = {}
        for task in TaskKind:
            self._task[task] = next_id
            next_id += 1
        self.pad_id = next_id
        self.size = next_id + 1
        # Lookup tables indexed by token id
        self._modality_of = np.empty(self.size, dtype=np.int8)
        for modality in Modality:
            self._modality_of[self.range(modality).start : self.range(modality).stop] = (
                modality
            )
        for (kind, modality), token_id in self._special.items():
            self._modality_of[token_id] = modality
        for task, token_id in self._task.items():
            self._modality_of[token_id] = task.modality
        self._modality_of[self.pad_id] = Modality.TEXT
        self._mask_ids = np.array(
            [self._special["mask", modality] for modality in Modality], dtype=np.int64
        )
        self._boundary_ids = np.array(
            [
                self._special[kind, modality]
                for modality in Modality
                for kind in ("bos", "eos")
            ],
            dtype=np.int64,
        )
        self._task_ids = np.array(list(self._task.values()), dtype=np.int64)

    def __repr__(self):
        return "UnifiedVocab(text=%d, image=%d, audio=%d)" % self.sizes

    def __eq__(self, other):
        return isinstance(other, UnifiedVocab) and self.sizes == other.sizes

    def __hash__(self):
        return hash(self.sizes)

    def __len__(self):
        return self.size

    # Id lookups

    def range(self, modality):
        """
        Half-open payload id range of a modality.
        """
        modality = Modality.parse(modality)
        start = self._starts[modality]
        return range(start, start + self.sizes[modality])

    def bos(self, modality):
        return self._special["bos", Modality.parse(modality)]

    def eos(self, modality):
        return self._special["eos", Modality.parse(modality)]

    def mask(self, modality):
        return self._special["mask", Modality.parse(modality)]

    def task_id(self, task):
        return self._task[TaskKind.parse(task)]

    def task_of(self, token_id):
        for task, candidate in self._task.items():
            if candidate == token_id:
                return task
        raise InvalidArgument("Token %r is not a task token" % (token_id,))

    def modality_of(self, token_id):
        """
        Modality of any id; special ids resolve through their subscript and
        task ids through the modality their task generates.
        """
        if not 0 <= int(token_id) < self.size:
            raise InvalidArgument(
                "Token id %r outside the vocabulary of size %d" % (token_id, self.size)
            )
        return Modality(int(self._modality_of[int(token_id)]))

    def modality_array(self, token_ids):
        return self._modality_of[np.asarray(token_ids, dtype=np.int64)]

    def mask_id_array(self, modalities):
        """
        MASK id for each entry of an array of modality codes.
        """
        return self._mask_ids[np.asarray(modalities, dtype=np.int64)]

    def is_mask(self, token_ids):
        return np.isin(np.asarray(token_ids), self._mask_ids)

    def is_boundary(self, token_ids):
        return np.isin(np.asarray(token_ids), self._boundary_ids)

    def is_task(self, token_ids):
        return np.isin(np.asarray(token_ids), self._task_ids)

    def is_special(self, token_ids):
        return np.asarray(token_ids) >= self.payload_size

    def in_range(self, token_ids, modality):
        ids = np.asarray(token_ids)
        modality_range = self.range(modality)
        return (ids >= modality_range.start) & (ids < modality_range.stop)

    # Serialization

    def to_json(self):
        special = {}
        for (kind, modality), token_id in self._special.items():
            special["%s_%s" % (kind, modality.label)] = token_id
        for task, token_id in self._task.items():
            special["task_%s" % task.value] = token_id
        special["pad_text"] = self.pad_id
        return {
            "version": VOCAB_FORMAT_VERSION,
            "size": self.size,
            "sizes": {modality.label: self.sizes[modality] for modality in Modality},
            "ranges": {
                modality.label: [self.range(modality).start, self.range(modality).stop]
                for modality in Modality
            },
            "special": special,
        }

    @classmethod
    def from_json(cls, data):
        if data.get("version") != VOCAB_FORMAT_VERSION:
            raise InvalidArgument(
                "Unsupported vocabulary format version %r" % data.get("version")
            )
        vocab = build_vocab(data["sizes"])
        if vocab.to_json() != data:
            raise InvalidArgument("Vocabulary document is inconsistent with its sizes")
        return vocab


def build_vocab(sizes):
    """
    Builds the unified vocabulary from per-modality payload sizes, given either
    as a mapping keyed by modality name or as a (text, image, audio) tuple.
    """
    if hasattr(sizes, "items"):
        unknown = set(sizes) - {modality.label for modality in Modality}
        if unknown:
            raise InvalidArgument("Unknown modalities %s" % sorted(unknown))
        try:
            sizes = tuple(sizes[modality.label] for modality in Modality)
        except KeyError as error:
            raise InvalidArgument("Missing size for modality %s" % error)
    if len(sizes) != len(Modality):
        raise InvalidArgument("Expected three modality sizes, got %r" % (sizes,))
    return UnifiedVocab(*sizes)


@functools.lru_cache(maxsize=None)
def _cached_vocab(sizes):
    return UnifiedVocab(*sizes)


def get_vocab():
    """
    Returns the vocabulary configured by the TRIMASK_VOCAB setting.
    """
    sizes = getattr(settings, "TRIMASK_VOCAB", DEFAULT_VOCAB_SIZES)
    return _cached_vocab(tuple(build_vocab(sizes).sizes))


@dataclass(frozen=True, eq=False)
class Sequence:
    """
    A length-L* training or inference sequence. ``modality`` holds the
    Modality code of every position; ``maskable`` is false on task, pad and
    (unless requested otherwise) boundary positions.
    """

    vocab: UnifiedVocab
    tokens: np.ndarray
    maskable: np.ndarray
    modality: np.ndarray
    task: TaskKind

    def __post_init__(self):
        for array in (self.tokens, self.maskable, self.modality):
            array.setflags(write=False)

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return (
            isinstance(other, Sequence)
            and self.vocab == other.vocab
            and np.array_equal(self.tokens, other.tokens)
            and np.array_equal(self.maskable, other.maskable)
        )

    __hash__ = None

    @property
    def pad_positions(self):
        return self.tokens == self.vocab.pad_id

    @property
    def attention_mask(self):
        return ~self.pad_positions

    @property
    def maskable_positions(self):
        return np.flatnonzero(self.maskable)

    @property
    def mask_tokens(self):
        """
        MASK id each position would take when corrupted.
        """
        return self.vocab.mask_id_array(self.modality)

    def to_list(self):
        return [int(token) for token in self.tokens]

    @classmethod
    def from_tokens(cls, vocab, tokens, boundaries_maskable=False):
        """
        Rebuilds masks and the modality map from a flat id array.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 1 or len(tokens) == 0:
            raise InvalidArgument("Expected a non-empty flat token array")
        if tokens.min() < 0 or tokens.max() >= vocab.size:
            raise InvalidArgument("Token ids outside the vocabulary")
        task = vocab.task_of(int(tokens[0]))
        pad = tokens == vocab.pad_id
        maskable = ~pad & ~vocab.is_task(tokens)
        packed = task is TaskKind.TEXT and (
            len(tokens) < 2 or tokens[1] != vocab.bos(Modality.TEXT)
        )
        modality = np.full(len(tokens), Modality.TEXT, dtype=np.int8)
        if task is not TaskKind.TEXT:
            closing = np.flatnonzero(tokens == vocab.eos(task.modality))
            if len(closing) == 0:
                raise InvalidArgument("Pair sequence without EOS_%s" % task.modality.label)
            modality[: closing[0] + 1] = task.modality
        if not packed and not boundaries_maskable:
            maskable &= ~vocab.is_boundary(tokens)
        return cls(vocab, tokens, maskable, modality, task)


def _check_ids(vocab, tokens, modality, allowed=()):
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    valid = vocab.in_range(tokens, modality) | np.isin(tokens, list(allowed))
    if not valid.all():
        raise InvalidArgument(
            "Tokens %s are not %s tokens"
            % (tokens[~valid][:5].tolist(), Modality.parse(modality).label)
        )
    return tokens


def assemble_pair(vocab, task, payload, text, length, boundaries_maskable=False):
    """
    Lays out a mixed-modality sample as
    ``TASK, BOS_m, payload, EOS_m, BOS_text, text, EOS_text, PAD_text...``.
    """
    task = TaskKind.parse(task)
    if task is TaskKind.TEXT:
        raise InvalidArgument("Text-only samples are packed, not assembled as pairs")
    modality = task.modality
    payload = _check_ids(vocab, payload, modality)
    text = _check_ids(vocab, text, Modality.TEXT)
    required = 1 + 2 + len(payload) + 2 + len(text)
    if required > length:
        raise SequenceTooLong(required, length)
    tokens = np.concatenate(
        [
            [vocab.task_id(task), vocab.bos(modality)],
            payload,
            [vocab.eos(modality), vocab.bos(Modality.TEXT)],
            text,
            [vocab.eos(Modality.TEXT)],
            np.full(length - required, vocab.pad_id),
        ]
    ).astype(np.int64)
    modality_map = np.full(length, Modality.TEXT, dtype=np.int8)
    modality_map[: 3 + len(payload)] = modality
    maskable = np.zeros(length, dtype=bool)
    maskable[2 : 2 + len(payload)] = True
    text_start = 3 + len(payload) + 1
    maskable[text_start : text_start + len(text)] = True
    if boundaries_maskable:
        for position in (1, 2 + len(payload), 3 + len(payload), required - 1):
            maskable[position] = True
    return Sequence(vocab, tokens, maskable, modality_map, task)


def document_stream(documents, vocab):
    """
    Concatenates text documents, closing each with EOS_text.
    """
    separator = vocab.eos(Modality.TEXT)
    for document in documents:
        yield from (int(token) for token in document)
        yield separator


def pack_text(stream, length, vocab):
    """
    Takes the next ``length - 1`` tokens of a text token stream and prefixes
    them with TASK_text. Packed sequences never contain padding and every
    position but the task token is maskable.

    An empty stream is an error. A stream that ends part way through a
    sequence raises StreamExhausted too, which iter_packed takes as the end
    of the documents; the partial chunk is consumed and dropped.
    """
    iterator = iter(stream)
    body = list(itertools.islice(iterator, length - 1))
    if not body or len(body) < length - 1:
        raise StreamExhausted(len(body), length - 1)
    body = _check_ids(vocab, body, Modality.TEXT, allowed=[vocab.eos(Modality.TEXT)])
    tokens = np.concatenate([[vocab.task_id(TaskKind.TEXT)], body]).astype(np.int64)
    maskable = np.ones(length, dtype=bool)
    maskable[0] = False
    modality = np.full(length, Modality.TEXT, dtype=np.int8)
    return Sequence(vocab, tokens, maskable, modality, TaskKind.TEXT)


def iter_packed(documents, length, vocab):
    """
    Greedily packs documents into sequences, dropping the final partial chunk.
    """
    stream = document_stream(documents, vocab)
    while True:
        try:
            yield pack_text(stream, length, vocab)
        except StreamExhausted:
            return


def text_window(document, length, vocab, rng):
    """
    A random contiguous window of a single document, cycled with EOS_text
    when the document is shorter than the sequence.
    """
    capacity = length - 1
    cycle = list(document) + [vocab.eos(Modality.TEXT)]
    repeats = -(-(capacity + len(cycle)) // len(cycle))
    tiled = cycle * repeats
    offset = int(rng.integers(0, len(cycle)))
    return pack_text(tiled[offset : offset + capacity], length, vocab)


def write_sequences(path, sequences):
    with open(path, "w") as handle:
        for sequence in sequences:
            handle.write(json.dumps(sequence.to_list()) + "\n")


def read_sequences(path, vocab, boundaries_maskable=False):
    sequences = []
    with open(path) as handle:
        for line in handle:
            if line.strip():
                sequences.append(
                    Sequence.from_tokens(
                        vocab,
                        json.loads(line),
                        boundaries_maskable=boundaries_maskable,
                    )
                )
    return sequences
