"""Generate runtime oracle fixtures with the Hugging Face GPT-2 implementation.

Reads a GPT-2 model directory (config.json, model.safetensors, vocab.json,
merges.txt), runs 50 fixed prompts through `GPT2LMHeadModel` in float32 and
writes:

  gpt2_prompts.json       prompts, token ids, top-1 next-token ids
  gpt2_logits.bin         last-position logits, 50 x V little-endian f32
  gpt2_hidden.bin         residual stream of prompt 0, (L+1) x T x d f32,
                          block outputs taken before the final layer norm

Usage:
    python tools/oracle/make_runtime_fixtures.py --model <dir> \
        --out crates/core/tests/fixtures
"""

import argparse
import json
from pathlib import Path

import numpy as np
import torch
from transformers import GPT2LMHeadModel, GPT2Tokenizer

PROMPTS = [
    "The capital of France is",
    "Hello world",
    "Once upon a time, there was a",
    "Mary put fish inside a jewelry box while her son wasn't looking. Her son opens the box. Inside the box, he expects to find",
    "Mary put jewelry inside a jewelry box and her son sees it. Her son opens the box. Inside the box, there is",
    "Ned and you take a photo of an apple on a tree. While the photo develops, Ned leaves and is unaware that a wind blows the apple to ground. Ned believes that the apple is on the",
    "Ned and you take a photo of an apple on a tree. While the photo develops, you and Ned see a strong wind blow the apple on the ground. Currently, the apple is on the",
    "Charles left his wallet on the counter as he was leaving the store. The wallet fell on the floor. Charles returns Charles will look for the wallet on the",
    "Charles left his wallet on the counter as he was leaving the store. No one has touched his wallet. Charles returns. The wallet is on the",
    "The wallet is on the",
    "Currently, the apple is on the",
    "Inside the box, he expects to find",
    "1 2 3 4 5 6 7 8 9",
    "def main():\n    print(",
    "In 1492, Columbus sailed",
    "The quick brown fox jumps over the lazy",
    "She said: \"I'll be there at 5:30!\"",
    "Water boils at 100 degrees",
    "café naïve façade",
    "日本語のテキスト",
    "A",
    ".",
    "   leading spaces",
    "The results were significant (p < 0.05) and",
    "To be, or not to be, that is the",
    "Roses are red, violets are",
    "The mitochondria is the powerhouse of the",
    "When the sun sets, the sky turns",
    "Alice thinks that Bob thinks that the ball is in the",
    "Sally puts her marble in the basket and leaves the room. Anne moves the marble to the box. Sally will look for her marble in the",
    "The cat sat on the",
    "It was the best of times, it was the worst of",
    "E = mc",
    "https://www.example.com/index",
    "I can't believe it's already",
    "THE END",
    "Question: What is two plus two? Answer:",
    "Large language models represent beliefs in their",
    "The experiment was repeated one hundred times with different",
    "Tokyo, Paris, London, and",
    "Monday, Tuesday, Wednesday,",
    "The theory of mind is the ability to",
    "He opened the door and saw",
    "$100, $200, $",
    "red, green, blue, yellow,",
    "The first law of thermodynamics states that",
    "x = x + 1\ny = y *",
    "Neurons in the prefrontal cortex",
    "She looked at the map and realized that",
    "The end of the story is",
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    assert len(PROMPTS) == 50

    torch.manual_seed(0)
    tok = GPT2Tokenizer(str(Path(args.model) / "vocab.json"), str(Path(args.model) / "merges.txt"))
    model = GPT2LMHeadModel.from_pretrained(
        args.model, torch_dtype=torch.float32, attn_implementation="eager"
    )
    model.eval()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    records = []
    logits_all = []
    for i, prompt in enumerate(PROMPTS):
        ids = tok.encode(prompt)
        with torch.no_grad():
            captured = []
            hooks = []
            if i == 0:
                hooks = [
                    block.register_forward_hook(lambda m, inp, o: captured.append(
                        (o if torch.is_tensor(o) else o[0]).clone()
                    ))
                    for block in model.transformer.h
                ]
            res = model(torch.tensor([ids]), output_hidden_states=(i == 0))
            for h in hooks:
                h.remove()
        last = res.logits[0, -1].numpy().astype("<f4")
        logits_all.append(last)
        records.append({"prompt": prompt, "ids": ids, "top1": int(last.argmax())})
        if i == 0:
            embed = res.hidden_states[0][0]
            stack = [embed] + [c[0] for c in captured]
            hidden = torch.stack(stack).numpy().astype("<f4")
            hidden.tofile(out / "gpt2_hidden.bin")
            meta_hidden = {"prompt_index": 0, "shape": list(hidden.shape)}

    np.stack(logits_all).astype("<f4").tofile(out / "gpt2_logits.bin")
    config = json.loads((Path(args.model) / "config.json").read_text())
    doc = {
        "model": "gpt2-small-shaped synthetic checkpoint",
        "vocab_size": config["vocab_size"],
        "oracle": f"transformers {__import__('transformers').__version__} GPT2LMHeadModel, torch {torch.__version__}, float32, eager attention",
        "hidden": meta_hidden,
        "prompts": records,
    }
    (out / "gpt2_prompts.json").write_text(json.dumps(doc, indent=1, ensure_ascii=False) + "\n")
    print(f"wrote {len(records)} prompts to {out}")


if __name__ == "__main__":
    main()
