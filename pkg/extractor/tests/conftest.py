"""Builds a tiny local causal model once per session.

The fixture trains a byte-level BPE tokenizer on a few sentences and pairs it
with a randomly initialized 3-layer GPT-2-architecture model (about 50k
parameters), saved to disk so the extractor loads it like any other local
model.  Everything is seeded and offline.
"""

from __future__ import annotations

import pytest
import torch
from tokenizers import Tokenizer, decoders, models, pre_tokenizers, trainers
from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

TELESCOPE_PROMPT = "The boy saw the man with the telescope"

_CORPUS = [
    TELESCOPE_PROMPT,
    "A girl reads the book near the window",
    "The dog chased the ball across the yard",
    "Students solve problems with careful reasoning",
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> str:
    target = tmp_path_factory.mktemp("tinylm")
    tokenizer = Tokenizer(models.BPE(unk_token=None))
    tokenizer.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tokenizer.decoder = decoders.ByteLevel()
    trainer = trainers.BpeTrainer(
        vocab_size=384,
        special_tokens=[],
        initial_alphabet=pre_tokenizers.ByteLevel.alphabet(),
        show_progress=False,
    )
    tokenizer.train_from_iterator(_CORPUS, trainer)
    fast = PreTrainedTokenizerFast(tokenizer_object=tokenizer)

    config = GPT2Config(
        vocab_size=fast.vocab_size,
        n_positions=64,
        n_embd=32,
        n_layer=3,
        n_head=4,
        bos_token_id=0,
        eos_token_id=0,
    )
    torch.manual_seed(0)
    model = GPT2LMHeadModel(config)
    model.save_pretrained(target)
    fast.save_pretrained(target)
    return str(target)
