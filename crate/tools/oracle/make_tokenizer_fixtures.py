"""Generate tokenizer oracle fixtures.

Encodes a deterministic set of 1,000 sentences with the Hugging Face
reference GPT-2 tokenizer (the pure-Python implementation) and cross-checks
every id sequence against tiktoken built from the same vocabulary files.

Usage:
    python tools/oracle/make_tokenizer_fixtures.py \
        --assets assets/gpt2 \
        --out crates/core/tests/fixtures/tokenizer_oracle.jsonl
"""

import argparse
import json
import random
from pathlib import Path

from transformers import GPT2Tokenizer

WORDS = """the a an and or but if then because while when where who what which
apple tree ground wallet counter floor box jewelry fish photo wind store son
Mary Ned Charles Anna Zhang O'Brien McDonald believes expects thinks leaves
returns develops blows touched looking opens put find look will would could
quickly slowly never always yesterday tomorrow kitchen garden basket drawer
cupboard marble chocolate sandwich umbrella letter keys phone cat dog bird
GPU CPU HTTP JSON API iPhone eBay YouTube COVID-19 e-mail well-known x86_64
""".split()

UNICODE = [
    "café", "naïve", "façade", "Straße", "Ærøskøbing", "Ελληνικά", "Русский",
    "中文字符", "日本語のテキスト", "한국어", "العربية", "עברית", "हिन्दी",
    "ภาษาไทย", "😀", "👩‍👩‍👧", "🍎🌳", "Ⅻ", "x²", "½", "１２３", "€100", "©",
    "naïve‐café", "ﬁne", "Ω", "µs", " nbsp", "tab\tsep", "zero​width",
]

PUNCT = [".", ",", "!", "?", ";", ":", "...", "--", "—", "\"", "'", "(", ")",
         "[", "]", "{", "}", "<", ">", "/", "\\", "@", "#", "$", "%", "^", "&",
         "*", "_", "+", "=", "~", "`", "|"]

CONTRACTIONS = ["'s", "'t", "'re", "'ve", "'m", "'ll", "'d", "'S", "'T",
                "'RE", "n't", "'em"]

SEPARATORS = [" ", " ", " ", " ", "  ", "   ", "\t", "\n", "\n\n", " \n", "\r\n",
              "　", " "]


def number(rng):
    kind = rng.randrange(6)
    if kind == 0:
        return str(rng.randrange(10))
    if kind == 1:
        return str(rng.randrange(100000))
    if kind == 2:
        return f"{rng.randrange(1000)},{rng.randrange(1000):03d}"
    if kind == 3:
        return f"{rng.random() * 100:.{rng.randrange(1, 5)}f}"
    if kind == 4:
        return str(rng.randrange(1900, 2100))
    return f"{rng.randrange(1, 13)}/{rng.randrange(1, 29)}/{rng.randrange(100)}"


def word(rng):
    r = rng.random()
    if r < 0.62:
        w = rng.choice(WORDS)
        if rng.random() < 0.1:
            w = w.upper()
        elif rng.random() < 0.15:
            w = w.capitalize()
        if rng.random() < 0.08:
            w += rng.choice(CONTRACTIONS)
        return w
    if r < 0.72:
        return number(rng)
    if r < 0.84:
        return rng.choice(UNICODE)
    if r < 0.92:
        return "".join(rng.choice(PUNCT) for _ in range(rng.randrange(1, 4)))
    return rng.choice(WORDS) + rng.choice(PUNCT) + rng.choice(WORDS)


def sentence(rng):
    n = rng.randrange(1, 25)
    parts = []
    for i in range(n):
        parts.append(word(rng))
        if i < n - 1:
            parts.append(rng.choice(SEPARATORS))
    text = "".join(parts)
    if rng.random() < 0.5:
        text += rng.choice([".", "!", "?", "", " ", "  ", "\n"])
    if rng.random() < 0.1:
        text = rng.choice([" ", "  ", "\n"]) + text
    return text


def corpus_strings(corpus_path):
    data = json.loads(Path(corpus_path).read_text())
    out = []
    for pair in data["pairs"]:
        for trial in (pair["true_trial"], pair["false_trial"]):
            for q in (trial["fact_question"], trial["belief_question"]):
                out.append(trial["statement"] + " " + q["stem"])
                out.append(q["stem"])
                out.append(" " + q["candidate_a"])
                out.append(" " + q["candidate_b"])
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--assets", default="assets/gpt2")
    ap.add_argument("--corpus", default="data/tom_pairs.json")
    ap.add_argument("--out", required=True)
    ap.add_argument("--count", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20230701)
    args = ap.parse_args()

    vocab = str(Path(args.assets) / "vocab.json")
    merges = str(Path(args.assets) / "merges.txt")
    reference = GPT2Tokenizer(vocab, merges)

    import tiktoken
    from tiktoken.load import data_gym_to_mergeable_bpe_ranks

    ranks = data_gym_to_mergeable_bpe_ranks(merges, vocab)
    check = tiktoken.Encoding(
        name="gpt2-local",
        pat_str=r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+""",
        mergeable_ranks=ranks,
        special_tokens={},
    )

    rng = random.Random(args.seed)
    texts = corpus_strings(args.corpus)
    texts += ["Hello world", "The capital of France is", "", " ", "  leading", "trailing  "]
    seen = set()
    unique = []
    for t in texts:
        if t not in seen:
            seen.add(t)
            unique.append(t)
    while len(unique) < args.count:
        t = sentence(rng)
        if t not in seen:
            seen.add(t)
            unique.append(t)
    unique = unique[: args.count]

    with open(args.out, "w", encoding="utf-8") as f:
        for text in unique:
            ids = reference.encode(text)
            other = check.encode_ordinary(text)
            if ids != other:
                raise SystemExit(f"reference tokenizers disagree on {text!r}: {ids} vs {other}")
            if reference.decode(ids) != text:
                raise SystemExit(f"reference round trip failed on {text!r}")
            f.write(json.dumps({"text": text, "ids": ids}, ensure_ascii=False) + "\n")
    print(f"wrote {len(unique)} fixtures to {args.out}")


if __name__ == "__main__":
    main()
