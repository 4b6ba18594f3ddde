"""
Reverse-diffusion generation.

Generation starts from a sequence whose target region is fully masked and
reveals a share of the masked positions at every step, sampling each token
from the denoiser's softmax restricted to the payload ids of the position's
modality.
"""

import asyncio
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from asgiref.sync import async_to_sync, sync_to_async

from .exceptions import InvalidArgument, NoSupport, SequenceTooLong
from .schedules import parse_schedule
from .vocab import Modality, Sequence, TaskKind

logger = logging.getLogger("trimask.sampler")

REVEAL_RULES = ("confidence", "random")

# Temperatures below this sample the argmax.
GREEDY_TEMPERATURE = 1e-6


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 16
    cfg_scale: float = 1.0
    temperature: float = 1.0
    top_p: float = 1.0
    schedule: str = "linear"
    reveal: str = "confidence"

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidArgument("Generation needs at least one step")
        if self.cfg_scale < 0:
            raise InvalidArgument("cfg_scale must be non-negative")
        if not self.temperature > 0:
            raise InvalidArgument("temperature must be positive")
        if not 0 < self.top_p <= 1:
            raise InvalidArgument("top_p must lie in (0, 1]")
        if self.reveal not in REVEAL_RULES:
            raise InvalidArgument("Unknown reveal rule %r" % self.reveal)
        parse_schedule(self.schedule)

    def replace(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return {
            "steps": self.steps,
            "cfg_scale": self.cfg_scale,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "schedule": self.schedule,
            "reveal": self.reveal,
        }


PRESETS = {
    "image": SamplerConfig(cfg_scale=6.0, temperature=1.0, top_p=1.0),
    "audio": SamplerConfig(cfg_scale=3.0, temperature=1.2, top_p=0.9),
    "text": SamplerConfig(),
    "image-ablation": SamplerConfig(cfg_scale=6.0, temperature=0.9, top_p=0.9),
}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise InvalidArgument(
            "Unknown sampler preset %r (expected one of %s)" % (name, ", ".join(PRESETS))
        )


@dataclass
class GenerationState:
    """
    A partially generated sequence. ``prompt`` flags the conditioning text
    positions that unconditional passes replace with MASK_text.
    """

    vocab: object
    tokens: np.ndarray
    modality: np.ndarray
    prompt: np.ndarray
    task: TaskKind = None
    step: int = 0

    @property
    def masked(self):
        return self.vocab.is_mask(self.tokens)

    @property
    def num_masked(self):
        return int(self.masked.sum())

    @property
    def attention_mask(self):
        return self.tokens != self.vocab.pad_id

    def unconditional_tokens(self):
        return np.where(self.prompt, self.vocab.mask(Modality.TEXT), self.tokens)

    def copy(self):
        return replace(
            self,
            tokens=self.tokens.copy(),
            modality=self.modality.copy(),
            prompt=self.prompt.copy(),
        )

    @classmethod
    def from_tokens(cls, vocab, tokens, prompt=None):
        """
        A state over explicit ids. Masked positions take the modality of
        their MASK id, others the modality of their own id.
        """
        tokens = np.array(tokens, dtype=np.int64)
        modality = np.array([vocab.modality_of(int(token)) for token in tokens], dtype=np.int8)
        if prompt is None:
            prompt = np.zeros(len(tokens), dtype=bool)
        return cls(vocab, tokens, modality, np.asarray(prompt, dtype=bool))


def init_masked(vocab, task, prompt, target_len, length=None):
    """
    Lays out a generation request. A modality task becomes
    ``TASK, BOS_m, MASK_m * n, EOS_m, BOS_text, prompt, EOS_text``; a text
    task becomes ``TASK_text, BOS_text, prompt, MASK_text * n, EOS_text``.
    Positions beyond the layout up to ``length`` are PAD_text.
    """
    task = TaskKind.parse(task)
    prompt = [int(token) for token in prompt]
    if target_len < 0:
        raise InvalidArgument("target_len must be non-negative")
    if prompt and not vocab.in_range(np.array(prompt), Modality.TEXT).all():
        raise InvalidArgument("Prompts must consist of text payload ids")
    text = Modality.TEXT
    if task is TaskKind.TEXT:
        tokens = (
            [vocab.task_id(task), vocab.bos(text)]
            + prompt
            + [vocab.mask(text)] * target_len
            + [vocab.eos(text)]
        )
        modality = [text] * len(tokens)
        prompt_mask = [False, False] + [True] * len(prompt) + [False] * (target_len + 1)
    else:
        m = task.modality
        tokens = (
            [vocab.task_id(task), vocab.bos(m)]
            + [vocab.mask(m)] * target_len
            + [vocab.eos(m), vocab.bos(text)]
            + prompt
            + [vocab.eos(text)]
        )
        modality = [m] * (target_len + 3) + [text] * (len(prompt) + 2)
        prompt_mask = [False] * (target_len + 4) + [True] * len(prompt) + [False]
    if length is not None:
        if len(tokens) > length:
            raise SequenceTooLong(len(tokens), length)
        padding = length - len(tokens)
        tokens += [vocab.pad_id] * padding
        modality += [text] * padding
        prompt_mask += [False] * padding
    return GenerationState(
        vocab,
        np.array(tokens, dtype=np.int64),
        np.array(modality, dtype=np.int8),
        np.array(prompt_mask, dtype=bool),
        task,
    )


def guided_logits(l_cond, l_uncond, g):
    """
    Classifier-free guidance l_uncond + g (l_cond - l_uncond); g = 1 returns
    the conditional logits and g = 0 the unconditional ones exactly.
    """
    if np.shape(l_cond) != np.shape(l_uncond):
        raise InvalidArgument("Conditional and unconditional logits differ in shape")
    if g == 1:
        return l_cond
    if g == 0:
        return l_uncond
    return l_uncond + g * (l_cond - l_uncond)


def tempered_probs(scores, temperature):
    """
    Softmax of ``scores / temperature``; the argmax one-hot (lowest index on
    ties) for temperatures below GREEDY_TEMPERATURE.
    """
    scores = np.asarray(scores, dtype=float)
    finite = np.isfinite(scores)
    if not finite.any():
        raise NoSupport("Every logit in the modality range is -inf")
    if temperature < GREEDY_TEMPERATURE:
        probs = np.zeros(len(scores))
        probs[int(np.argmax(np.where(finite, scores, -np.inf)))] = 1.0
        return probs
    shifted = np.where(finite, scores / temperature, -np.inf)
    shifted -= shifted.max()
    probs = np.exp(shifted)
    return probs / probs.sum()


def nucleus(probs, top_p):
    """
    Keeps the smallest prefix, by descending probability with lower index
    first on ties, whose mass reaches ``top_p`` and renormalises it.
    """
    probs = np.asarray(probs, dtype=float)
    order = np.argsort(-probs, kind="stable")
    cumulative = np.cumsum(probs[order])
    keep = int(np.searchsorted(cumulative, top_p - 1e-12)) + 1
    kept = order[:keep]
    truncated = np.zeros_like(probs)
    truncated[kept] = probs[kept]
    return truncated / truncated.sum()


def nucleus_probs(logits, modality, vocab, temperature=1.0, top_p=1.0):
    """
    The sampling distribution over the payload ids of ``modality``, returned
    with the first id of that range.
    """
    ids = vocab.range(Modality.parse(modality))
    probs = tempered_probs(np.asarray(logits)[ids.start : ids.stop], temperature)
    return nucleus(probs, top_p), ids.start


def sample_token(logits, modality, vocab, temperature, top_p, rng):
    probs, offset = nucleus_probs(logits, modality, vocab, temperature, top_p)
    if probs.max() == 1.0:
        return offset + int(np.argmax(probs))
    return offset + int(rng.choice(len(probs), p=probs))


def reveal_plan(num_masked, steps, schedule=None):
    """
    Number of positions revealed at each of ``steps`` steps. After step k,
    ceil(M * m(1 - k / K)) positions are still masked.
    """
    schedule = parse_schedule(schedule or "linear")
    remaining = [num_masked]
    for k in range(1, steps + 1):
        fraction = float(schedule.mask_fraction(1 - k / steps))
        remaining.append(min(remaining[-1], math.ceil(num_masked * fraction - 1e-9)))
    remaining[-1] = 0
    return [before - after for before, after in zip(remaining, remaining[1:])]


@dataclass
class StepTrace:
    step: int
    positions: list
    tokens: list

    def as_dict(self):
        return {"step": self.step, "positions": self.positions, "tokens": self.tokens}


@dataclass
class GenerationResult:
    tokens: np.ndarray
    vocab: object = None
    trace: list = field(default_factory=list)

    @property
    def sequence(self):
        return Sequence.from_tokens(self.vocab, self.tokens)

    def to_list(self):
        return [int(token) for token in self.tokens]


def generate(denoiser, state, config=None, rng=None):
    """
    Runs the reverse process from ``state`` until no position is masked.
    """
    config = config or SamplerConfig()
    rng = np.random.default_rng(rng)
    state = state.copy()
    vocab = state.vocab
    plan = reveal_plan(state.num_masked, config.steps, config.schedule)
    trace = []
    for step, count in enumerate(plan, 1):
        if count == 0:
            continue
        masked = np.flatnonzero(state.masked)
        attention = state.attention_mask
        logits = denoiser.predict(state.tokens, attention)
        if config.cfg_scale != 1:
            unconditional = denoiser.predict(state.unconditional_tokens(), attention)
            logits = guided_logits(logits, unconditional, config.cfg_scale)
        candidates = np.empty(len(masked), dtype=np.int64)
        confidence = np.empty(len(masked))
        for slot, position in enumerate(masked):
            modality = Modality(int(state.modality[position]))
            probs, offset = nucleus_probs(
                logits[position], modality, vocab, config.temperature, config.top_p
            )
            choice = (
                int(np.argmax(probs))
                if probs.max() == 1.0
                else int(rng.choice(len(probs), p=probs))
            )
            candidates[slot] = offset + choice
            confidence[slot] = probs[choice]
        if config.reveal == "confidence":
            chosen = np.argsort(-confidence, kind="stable")[:count]
        else:
            chosen = rng.choice(len(masked), size=count, replace=False)
        chosen = np.sort(chosen)
        positions = masked[chosen]
        state.tokens[positions] = candidates[chosen]
        state.step = step
        trace.append(StepTrace(step, positions.tolist(), candidates[chosen].tolist()))
        logger.debug("step %d revealed %d positions", step, count)
    return GenerationResult(state.tokens, vocab, trace)


async def agenerate_many(denoiser, states, config=None, seed=0):
    """
    Runs independent generations concurrently on one frozen snapshot of
    ``denoiser``; each gets its own child seed of ``seed``.
    """
    snapshot = denoiser.snapshot()
    seeds = np.random.SeedSequence(seed).spawn(len(states))
    run = sync_to_async(generate, thread_sensitive=False)
    return await asyncio.gather(
        *(
            run(snapshot, state, config, np.random.default_rng(child))
            for state, child in zip(states, seeds)
        )
    )


generate_many = async_to_sync(agenerate_many)
