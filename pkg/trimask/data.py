"""
Training data: mixtures of text-only, image-text and audio-text samples.
"""

import json
import logging

import numpy as np

from .exceptions import InvalidArgument
from .vocab import Sequence, TaskKind, assemble_pair, document_stream, pack_text, text_window

logger = logging.getLogger("trimask.data")

# Text documents are packed into full sequences except for this share, which
# is a random window of one document.
DEFAULT_P_SUBSAMPLE = 0.05


class TextSource:
    """
    Produces text-only sequences from raw documents.
    """

    def __init__(self, documents, length, vocab, p_subsample=DEFAULT_P_SUBSAMPLE):
        self.documents = [list(document) for document in documents]
        if not self.documents or not any(self.documents):
            raise InvalidArgument("A text source needs at least one non-empty document")
        if not 0 <= p_subsample <= 1:
            raise InvalidArgument("p_subsample must lie in [0, 1]")
        self.length = length
        self.vocab = vocab
        self.p_subsample = p_subsample
        self._stream = document_stream(self._cycle(), vocab)

    def _cycle(self):
        while True:
            yield from self.documents

    def __len__(self):
        return len(self.documents)

    def draw(self, rng):
        if rng.random() < self.p_subsample:
            document = self.documents[int(rng.integers(len(self.documents)))]
            return text_window(document, self.length, self.vocab, rng)
        return pack_text(self._stream, self.length, self.vocab)


class MixtureDataset:
    """
    Draws samples whose task kind is an iid categorical draw under the
    mixture weights. Each category is a list of Sequences or a TextSource.
    """

    def __init__(self, categories, weights=None, min_weight=None):
        self.categories = {
            TaskKind.parse(task): source for task, source in categories.items() if len(source)
        }
        if not self.categories:
            raise InvalidArgument("The dataset has no samples")
        if weights is None:
            weights = {task: 1.0 / len(self.categories) for task in self.categories}
        self.weights = {TaskKind.parse(task): float(weight) for task, weight in weights.items()}
        total = sum(self.weights.values())
        if any(weight < 0 for weight in self.weights.values()) or abs(total - 1) > 1e-6:
            raise InvalidArgument("Mixture weights must be non-negative and sum to 1")
        if min_weight is not None:
            low = {task.value: w for task, w in self.weights.items() if w < min_weight}
            if low:
                raise InvalidArgument(
                    "Mixture weights %s are below the %g floor" % (low, min_weight)
                )
        for task, weight in self.weights.items():
            if weight > 0 and task not in self.categories:
                raise InvalidArgument("No %s samples for a positive weight" % task.value)
        self.length = self._length()

    def _length(self):
        lengths = set()
        for source in self.categories.values():
            if isinstance(source, TextSource):
                lengths.add(source.length)
            else:
                lengths.update(len(sequence) for sequence in source)
        if len(lengths) != 1:
            raise InvalidArgument("All samples must share one length, got %s" % sorted(lengths))
        return lengths.pop()

    @property
    def vocab(self):
        source = next(iter(self.categories.values()))
        return source.vocab if isinstance(source, TextSource) else source[0].vocab

    @classmethod
    def from_sequences(cls, sequences, weights=None, min_weight=None):
        categories = {}
        for sequence in sequences:
            categories.setdefault(sequence.task, []).append(sequence)
        return cls(categories, weights, min_weight)

    def draw(self, count, rng):
        """
        ``count`` samples with iid task kinds. Within a category of ready
        sequences every sample on file is used once before any repeats.
        """
        tasks = [task for task, weight in self.weights.items() if weight > 0]
        probabilities = np.array([self.weights[task] for task in tasks])
        choices = rng.choice(len(tasks), size=count, p=probabilities / probabilities.sum())
        orders = {}
        for number, task in enumerate(tasks):
            source = self.categories[task]
            if not isinstance(source, TextSource):
                wanted = int(np.count_nonzero(choices == number))
                orders[task] = iter(walk_without_replacement(len(source), wanted, rng))
        samples = []
        for choice in choices:
            task = tasks[choice]
            source = self.categories[task]
            if isinstance(source, TextSource):
                samples.append(source.draw(rng))
            else:
                samples.append(source[int(next(orders[task]))])
        return samples


def walk_without_replacement(size, count, rng):
    """
    ``count`` indices into ``size`` items from back-to-back shuffled passes,
    so no index repeats before every index has been used.
    """
    passes = -(-count // size) if count else 0
    if not passes:
        return np.empty(0, dtype=np.int64)
    return np.concatenate([rng.permutation(size) for _ in range(passes)])[:count]


def load_samples(
    path, vocab, length, p_subsample=DEFAULT_P_SUBSAMPLE, boundaries_maskable=False
):
    """
    Reads a JSONL sample file into dataset categories. A line is either a flat
    id array (a ready sequence), ``{"task": "text", "tokens": [...]}`` (a raw
    text document) or ``{"task": ..., "payload": [...], "text": [...]}``.
    """
    categories = {}
    documents = []
    with open(path) as handle:
        for number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                item = json.loads(line)
                if isinstance(item, list):
                    sequence = Sequence.from_tokens(
                        vocab, item, boundaries_maskable=boundaries_maskable
                    )
                    if len(sequence) != length:
                        raise InvalidArgument(
                            "sequence has length %d, expected %d" % (len(sequence), length)
                        )
                elif TaskKind.parse(item["task"]) is TaskKind.TEXT:
                    documents.append(item["tokens"])
                    continue
                else:
                    sequence = assemble_pair(
                        vocab,
                        item["task"],
                        item["payload"],
                        item["text"],
                        length,
                        boundaries_maskable=boundaries_maskable,
                    )
            except (KeyError, TypeError, ValueError) as error:
                raise InvalidArgument("%s:%d: %s" % (path, number, error))
            categories.setdefault(sequence.task, []).append(sequence)
    if documents:
        if TaskKind.TEXT in categories:
            raise InvalidArgument("Mix either raw text documents or packed text sequences")
        categories[TaskKind.TEXT] = TextSource(documents, length, vocab, p_subsample)
    logger.debug(
        "Loaded %s from %s",
        {task.value: len(source) for task, source in categories.items()},
        path,
    )
    return categories
