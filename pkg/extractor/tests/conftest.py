"""Shared fixtures: tiny but real encoders, built once per session.

The production-size towers are hundreds of megabytes and live on remote
hubs; what these tests need is their architecture -- the conv stride,
the 1024 hidden width, the special-token layout -- not their knowledge.
So we instantiate randomly initialized two-layer versions at the real
width, save them to disk, and point the extractor at those directories
exactly like any other local checkpoint. No network involved.
"""

import json
import os
import wave

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")

import numpy as np
import pytest
import torch
from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.pre_tokenizers import Whitespace
from tokenizers.processors import TemplateProcessing
from transformers import (
    HubertConfig,
    HubertModel,
    PreTrainedTokenizerFast,
    XLMRobertaConfig,
    XLMRobertaModel,
)

HIDDEN = 1024

# XLM-R's conventional special-token layout, shrunk to a toy vocabulary.
VOCAB = {
    "<s>": 0,
    "<pad>": 1,
    "</s>": 2,
    "<unk>": 3,
    "the": 4,
    "cat": 5,
    "sat": 6,
    "on": 7,
    "mat": 8,
    "hello": 9,
    "world": 10,
}


@pytest.fixture(scope="session")
def speech_model_dir(tmp_path_factory):
    cfg = HubertConfig(
        hidden_size=HIDDEN, num_hidden_layers=2, num_attention_heads=8, intermediate_size=256
    )
    torch.manual_seed(0)
    model = HubertModel(cfg)
    out = tmp_path_factory.mktemp("models") / "tiny-speech"
    model.save_pretrained(out)
    return str(out)


@pytest.fixture(scope="session")
def text_model_dir(tmp_path_factory):
    tok = Tokenizer(WordLevel(VOCAB, unk_token="<unk>"))
    tok.pre_tokenizer = Whitespace()
    tok.post_processor = TemplateProcessing(
        single="<s> $A </s>",
        pair="<s> $A </s> </s> $B </s>",
        special_tokens=[("<s>", VOCAB["<s>"]), ("</s>", VOCAB["</s>"])],
    )
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        bos_token="<s>",
        eos_token="</s>",
        unk_token="<unk>",
        pad_token="<pad>",
        cls_token="<s>",
        sep_token="</s>",
    )
    cfg = XLMRobertaConfig(
        vocab_size=len(VOCAB),
        hidden_size=HIDDEN,
        num_hidden_layers=2,
        num_attention_heads=8,
        intermediate_size=256,
        max_position_embeddings=64,
        type_vocab_size=1,
        pad_token_id=VOCAB["<pad>"],
        bos_token_id=VOCAB["<s>"],
        eos_token_id=VOCAB["</s>"],
    )
    torch.manual_seed(1)
    model = XLMRobertaModel(cfg)
    out = tmp_path_factory.mktemp("models") / "tiny-text"
    model.save_pretrained(out)
    fast.save_pretrained(out)
    return str(out)


# -- plain helpers (imported by the test modules) --------------------------


def write_wav(path, seconds=0.5, rate=16000, channels=1, width=2, seed=0):
    """Write a noise WAV with the given framing; returns the path."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * rate)) * channels
    x = rng.uniform(-0.5, 0.5, size=n)
    if width == 1:
        data = (x * 127 + 128).astype("u1").tobytes()
    elif width == 2:
        data = (x * 32767).astype("<i2").tobytes()
    elif width == 4:
        data = (x * (2**31 - 1)).astype("<i4").tobytes()
    else:  # deliberately unsupported widths, for the rejection tests
        data = b"\x00" * (n * width)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(data)
    return path


def write_jobs(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path
