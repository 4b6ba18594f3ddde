"""
Helpers for testing code built on trimask: tiny vocabularies and corpora,
sample files in the format ``train`` reads, and runs with a planted scaling
law.
"""

import json

import numpy as np
import torch

from ..denoisers import BaseDenoiser
from ..records import RunRecord
from ..scaling import from_billions, to_billions
from ..vocab import Modality, TaskKind, UnifiedVocab, assemble_pair

# Kaplan-form law planted in synthetic runs; N and D in billions.
PLANTED_LAW = {"E": 1.2, "A": 0.5, "B": 1.0, "a": 0.14, "b": 0.17}

__all__ = [
    "PLANTED_LAW",
    "ConstantDenoiser",
    "pair_corpus",
    "planted_loss",
    "planted_records",
    "scattered_records",
    "text_documents",
    "toy_vocab",
    "write_samples",
]


def toy_vocab(text=4, image=3, audio=3):
    return UnifiedVocab(text, image, audio)


class ConstantDenoiser(BaseDenoiser):
    """
    Returns the same logits for every position; usable as a DENOISERS backend.
    """

    def __init__(self, vocab, value=0.0):
        self.vocab = vocab
        self.value = float(value)

    def logits(self, tokens, attention_mask=None):
        shape = tuple(tokens.shape) + (self.vocab.size,)
        return torch.full(shape, self.value, dtype=torch.float64)


def pair_corpus(vocab, task, length, payload_len, text_len, count, seed=0):
    """
    ``count`` random pair sequences of one task kind.
    """
    task = TaskKind.parse(task)
    rng = np.random.default_rng(seed)
    payload_range = vocab.range(task.modality)
    text_range = vocab.range(Modality.TEXT)
    return [
        assemble_pair(
            vocab,
            task,
            rng.integers(payload_range.start, payload_range.stop, size=payload_len),
            rng.integers(text_range.start, text_range.stop, size=text_len),
            length,
        )
        for _ in range(count)
    ]


def text_documents(vocab, count, min_len=3, max_len=12, seed=0):
    rng = np.random.default_rng(seed)
    text_range = vocab.range(Modality.TEXT)
    return [
        rng.integers(text_range.start, text_range.stop, size=int(size)).tolist()
        for size in rng.integers(min_len, max_len + 1, size=count)
    ]


def write_samples(path, vocab, length, pairs=8, documents=16, seed=0):
    """
    Writes a sample JSONL file holding raw text documents and image-text and
    audio-text pairs that fit ``length``.
    """
    rng = np.random.default_rng(seed)
    payload_len = max(1, (length - 5) // 2)
    text_len = max(1, length - 5 - payload_len)
    with open(path, "w") as handle:
        for document in text_documents(vocab, documents, seed=seed):
            handle.write(json.dumps({"task": "text", "tokens": document}) + "\n")
        for task in (TaskKind.IMAGE_TEXT, TaskKind.AUDIO_TEXT):
            payload_range = vocab.range(task.modality)
            text_range = vocab.range(Modality.TEXT)
            for _ in range(pairs):
                handle.write(
                    json.dumps(
                        {
                            "task": task.value,
                            "payload": rng.integers(
                                payload_range.start, payload_range.stop, size=payload_len
                            ).tolist(),
                            "text": rng.integers(
                                text_range.start, text_range.stop, size=text_len
                            ).tolist(),
                        }
                    )
                    + "\n"
                )
    return path


def planted_loss(n, d, law=PLANTED_LAW):
    """
    The planted Kaplan law at N and D in billions.
    """
    n = np.asarray(n, dtype=float)
    d = np.asarray(d, dtype=float)
    return law["E"] + (law["A"] * n ** (-law["a"] / law["b"]) + law["B"] / d) ** law["b"]


def _planted_record(n, d, law, noise, rng, seed):
    # Losses follow the law at the integer counts the record stores.
    params, tokens = int(from_billions(n)), int(from_billions(d))
    loss = float(planted_loss(to_billions(params), to_billions(tokens), law))
    if noise:
        loss *= float(np.exp(rng.normal(0.0, noise)))
    return RunRecord(
        n_nonembed=params,
        n_total=params,
        d_tokens=tokens,
        batch_size=1,
        seq_len=1,
        steps=tokens,
        final_loss=loss,
        seed=seed,
    )


def planted_records(
    n_values=(1e-3, 4e-3, 1.6e-2, 6.4e-2, 0.256, 1.0),
    d_values=(1e-2, 6e-2, 0.36, 2.16, 13.0),
    noise=0.0,
    seed=0,
    law=PLANTED_LAW,
):
    """
    RunRecords on an (N, D) grid (billions) whose losses follow ``law``, with
    optional multiplicative log-normal noise.
    """
    rng = np.random.default_rng(seed)
    return [
        _planted_record(n, d, law, noise, rng, seed) for n in n_values for d in d_values
    ]


def scattered_records(
    count, law=PLANTED_LAW, n_range=(1e-3, 1.0), d_range=(1.0, 1e3), noise=0.0, seed=0
):
    """
    ``count`` RunRecords at log-uniform random (N, D) points (billions).
    """
    rng = np.random.default_rng(seed)
    n_values = np.exp(rng.uniform(*np.log(n_range), size=count))
    d_values = np.exp(rng.uniform(*np.log(d_range), size=count))
    return [
        _planted_record(n, d, law, noise, rng, seed) for n, d in zip(n_values, d_values)
    ]
