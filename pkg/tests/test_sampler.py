import async_timeout
import numpy as np
import pytest
import torch

from trimask.denoisers import BaseDenoiser, ExactPosteriorDenoiser
from trimask.exceptions import InvalidArgument, NoSupport, SequenceTooLong
from trimask.sampler import (
    PRESETS,
    GenerationState,
    SamplerConfig,
    agenerate_many,
    generate,
    generate_many,
    get_preset,
    guided_logits,
    init_masked,
    nucleus,
    reveal_plan,
    sample_token,
    tempered_probs,
)
from trimask.testing import ConstantDenoiser
from trimask.vocab import Modality, assemble_pair


@pytest.fixture
def corpus(vocab):
    return [
        assemble_pair(vocab, "image-text", [4, 5], [0, 1], 9),
        assemble_pair(vocab, "image-text", [4, 6], [0, 2], 9),
        assemble_pair(vocab, "image-text", [5, 6], [1, 1], 9),
    ]


def test_nucleus_truncates():
    probs = nucleus([0.5, 0.3, 0.2], 0.8)
    assert probs == pytest.approx([0.625, 0.375, 0.0])


def test_nucleus_ties_prefer_lower_index():
    assert nucleus([0.25, 0.25, 0.5], 0.7) == pytest.approx([1 / 3, 0.0, 2 / 3])


def test_nucleus_full_mass_is_identity():
    assert nucleus([0.1, 0.6, 0.3], 1.0) == pytest.approx([0.1, 0.6, 0.3])


def test_tempered_probs():
    assert tempered_probs([0.0, 0.0], 1.0) == pytest.approx([0.5, 0.5])
    assert tempered_probs([1.0, 3.0, 3.0], 0.0) == pytest.approx([0.0, 1.0, 0.0])
    with pytest.raises(NoSupport):
        tempered_probs([-np.inf, -np.inf], 1.0)


@pytest.mark.parametrize(
    "masked,steps,expected",
    [(8, 4, [2, 2, 2, 2]), (5, 2, [2, 3]), (3, 5, [0, 1, 0, 1, 1]), (0, 3, [0, 0, 0])],
)
def test_reveal_plan(masked, steps, expected):
    plan = reveal_plan(masked, steps)
    assert plan == expected
    assert sum(plan) == masked


def test_guided_logits():
    cond = np.array([1.0, 2.0])
    uncond = np.array([0.5, 0.0])
    assert guided_logits(cond, uncond, 1) is cond
    assert guided_logits(cond, uncond, 0) is uncond
    assert guided_logits(cond, uncond, 3) == pytest.approx([2.0, 6.0])
    with pytest.raises(InvalidArgument):
        guided_logits(cond, uncond[:1], 2)


def test_init_masked_modality_task(vocab):
    state = init_masked(vocab, "image-text", [0, 1], 2, length=11)
    assert state.tokens.tolist() == [20, 13, 15, 15, 14, 10, 0, 1, 11, 22, 22]
    assert state.prompt.tolist() == [False] * 6 + [True, True] + [False] * 3
    assert state.num_masked == 2
    assert state.unconditional_tokens()[6:8].tolist() == [12, 12]
    assert not state.attention_mask[-1]


def test_init_masked_text_task(vocab):
    state = init_masked(vocab, "text", [3], 2)
    assert state.tokens.tolist() == [19, 10, 3, 12, 12, 11]
    assert state.prompt.tolist() == [False, False, True, False, False, False]
    assert (state.modality == Modality.TEXT).all()


def test_init_masked_rejects(vocab):
    with pytest.raises(InvalidArgument):
        init_masked(vocab, "audio-text", [4], 2)
    with pytest.raises(SequenceTooLong):
        init_masked(vocab, "audio-text", [0, 1], 3, length=8)


def test_sample_token_stays_in_modality(vocab, rng):
    logits = np.zeros(vocab.size)
    for _ in range(20):
        assert vocab.modality_of(sample_token(logits, "audio", vocab, 1.0, 1.0, rng)) == (
            Modality.AUDIO
        )


def test_sampler_config_validation():
    with pytest.raises(InvalidArgument):
        SamplerConfig(steps=0)
    with pytest.raises(InvalidArgument):
        SamplerConfig(top_p=0.0)
    with pytest.raises(InvalidArgument):
        SamplerConfig(reveal="left-to-right")
    with pytest.raises(InvalidArgument):
        SamplerConfig(schedule="sawtooth")


def test_presets():
    assert get_preset("image").cfg_scale == 6.0
    assert (get_preset("audio").temperature, get_preset("audio").top_p) == (1.2, 0.9)
    assert set(PRESETS) >= {"image", "audio", "text"}
    with pytest.raises(InvalidArgument):
        get_preset("video")


@pytest.mark.parametrize("preset", ["text", "image"])
def test_exact_denoiser_recovers_member(vocab, corpus, preset):
    """
    Conditioning on a caption that only one member carries regenerates that
    member, with or without guidance.
    """
    denoiser = ExactPosteriorDenoiser(vocab, corpus)
    state = init_masked(vocab, "image-text", [0, 1], 2)
    result = generate(denoiser, state, get_preset(preset).replace(steps=2), rng=0)
    assert result.to_list() == corpus[0].tokens.tolist()
    assert result.sequence == corpus[0]
    assert [len(step.positions) for step in result.trace] == [1, 1]
    assert state.num_masked == 2


def test_generation_unmasks_everything(vocab):
    state = init_masked(vocab, "audio-text", [0, 2], 4, length=12)
    config = SamplerConfig(steps=3, reveal="random", top_p=0.9)
    result = generate(ConstantDenoiser(vocab), state, config, rng=1)
    tokens = result.tokens
    assert not vocab.is_mask(tokens).any()
    assert all(vocab.modality_of(int(token)) == Modality.AUDIO for token in tokens[2:6])
    assert tokens[6:].tolist() == state.tokens[6:].tolist()


def test_generation_is_seeded(vocab):
    state = init_masked(vocab, "text", [], 6)
    denoiser = ConstantDenoiser(vocab)
    first = generate(denoiser, state, rng=5)
    second = generate(denoiser, state, rng=5)
    assert first.to_list() == second.to_list()


def test_from_tokens_state(vocab):
    state = GenerationState.from_tokens(vocab, [19, 10, 12, 0, 11])
    assert state.num_masked == 1
    assert state.modality[2] == Modality.TEXT


@pytest.mark.asyncio
async def test_agenerate_many(vocab, corpus):
    denoiser = ExactPosteriorDenoiser(vocab, corpus)
    states = [init_masked(vocab, "image-text", [0, 2], 2) for _ in range(3)]
    async with async_timeout.timeout(30):
        results = await agenerate_many(denoiser, states, SamplerConfig(steps=2), seed=4)
    assert [result.to_list() for result in results] == [corpus[1].tokens.tolist()] * 3


def test_generate_many_is_reproducible(vocab):
    states = [init_masked(vocab, "text", [1], 4) for _ in range(4)]
    denoiser = ConstantDenoiser(vocab)
    first = [result.to_list() for result in generate_many(denoiser, states, seed=2)]
    second = [result.to_list() for result in generate_many(denoiser, states, seed=2)]
    assert first == second


class KeyedDenoiser(BaseDenoiser):
    """
    Logits drawn from a generator seeded by the input ids, so equal inputs
    always get equal logits. With ``prompt`` set, inputs whose prompt
    positions are all MASK_text get flat logits instead.
    """

    def __init__(self, vocab, prompt=None):
        self.vocab = vocab
        self.prompt = prompt
        self.calls = []

    def logits(self, tokens, attention_mask=None):
        rows = []
        for row in tokens.cpu().numpy():
            self.calls.append(row.copy())
            if self._unconditional(row):
                rows.append(np.zeros((len(row), self.vocab.size)))
            else:
                rng = np.random.default_rng(row.tolist())
                rows.append(rng.normal(scale=3.0, size=(len(row), self.vocab.size)))
        return torch.as_tensor(np.stack(rows))

    def _unconditional(self, row):
        if self.prompt is None or not self.prompt.any():
            return False
        return bool(self.vocab.is_mask(row[self.prompt]).all())


GENERATION_REQUESTS = [
    ("image-text", [0, 1, 2], 5),
    ("audio-text", [3], 4),
    ("text", [1, 0], 6),
]


@pytest.mark.parametrize("task,prompt,target_len", GENERATION_REQUESTS)
@pytest.mark.parametrize("reveal", ["confidence", "random"])
@pytest.mark.parametrize("cfg_scale", [1.0, 3.0])
def test_generation_invariants_hold_across_seeds(
    vocab, task, prompt, target_len, reveal, cfg_scale
):
    """
    Over many seeded runs every masked position is revealed exactly once,
    revealed tokens never change, each lies in its position's modality and
    nothing outside the masked positions moves.
    """
    denoiser = KeyedDenoiser(vocab)
    state = init_masked(vocab, task, prompt, target_len, length=16)
    initial = np.flatnonzero(state.masked)
    for steps in (1, 3, 7):
        config = SamplerConfig(steps=steps, reveal=reveal, cfg_scale=cfg_scale, top_p=0.9)
        for seed in range(40):
            result = generate(denoiser, state, config, rng=seed)
            tokens = result.tokens
            assert not vocab.is_mask(tokens).any()
            revealed = [position for step in result.trace for position in step.positions]
            assert sum(len(step.positions) for step in result.trace) == len(initial)
            assert sorted(revealed) == initial.tolist()
            assert [step.step for step in result.trace] == sorted(
                {step.step for step in result.trace}
            )
            for step in result.trace:
                assert tokens[step.positions].tolist() == step.tokens
            for position in initial:
                modality = Modality(int(state.modality[position]))
                assert vocab.in_range(tokens[position : position + 1], modality).all()
            untouched = np.setdiff1d(np.arange(len(tokens)), initial)
            assert tokens[untouched].tolist() == state.tokens[untouched].tolist()
    assert state.num_masked == len(initial)


@pytest.mark.parametrize("task,prompt,target_len", GENERATION_REQUESTS)
def test_unit_guidance_matches_conditional_only(vocab, task, prompt, target_len):
    """
    With guidance 1 the unconditional branch has no influence: swapping its
    logits for flat ones leaves every run bit for bit the same, and the
    denoiser never sees the prompt masked out.
    """
    state = init_masked(vocab, task, prompt, target_len, length=16)
    config = SamplerConfig(steps=4, cfg_scale=1.0)
    keyed = KeyedDenoiser(vocab)
    blind = KeyedDenoiser(vocab, prompt=state.prompt)
    for seed in range(25):
        first = generate(keyed, state, config, rng=seed)
        second = generate(blind, state, config, rng=seed)
        assert first.to_list() == second.to_list()
        assert [step.as_dict() for step in first.trace] == [
            step.as_dict() for step in second.trace
        ]
    conditional = state.tokens[state.prompt].tolist()
    assert all(call[state.prompt].tolist() == conditional for call in keyed.calls)
