"""Generate the bundled toy corpus (deterministic; about 1 MB).

Each roster preposition gets four signature "action" words and four
signature "object" words that only ever appear in its windows, so the
learned embeddings carry a recoverable signal. Filler words appear
everywhere, and a slice of preposition-free sentences feeds the extra
tensor slice. Run from the repository root:

    python3 tests/data/make_toy_corpus.py
"""

from pathlib import Path

import numpy as np

from preptensor.select import default_roster

TARGET_BYTES = 1_000_000
SEED = 12345
N_FILLERS = 20


def signature_words(roster):
    heads = {p: [f"act{k}{s}" for s in "ab"] for k, p in enumerate(roster)}
    comps = {p: [f"obj{k}{s}" for s in "ab"] for k, p in enumerate(roster)}
    return heads, comps


def generate(target_bytes=TARGET_BYTES, seed=SEED):
    roster = default_roster()
    heads, comps = signature_words(roster)
    fillers = [f"fill{i}" for i in range(N_FILLERS)]
    rng = np.random.default_rng(seed)
    chunks = []
    size = 0
    while size < target_bytes:
        if rng.random() < 0.15:
            n = int(rng.integers(4, 9))
            words = [fillers[i] for i in rng.integers(0, N_FILLERS, n)]
        else:
            # Keep the +/-3 window around the preposition pure signature
            # words; fillers sit beyond it and feed the extra slice.
            prep = roster[int(rng.integers(len(roster)))]
            h1, h2 = (heads[prep][i] for i in rng.integers(0, 2, 2))
            c1, c2 = (comps[prep][i] for i in rng.integers(0, 2, 2))
            tail = [fillers[i] for i in rng.integers(0, N_FILLERS,
                                                     int(rng.integers(2, 5)))]
            words = [h1, prep, c1, c2, h2, *tail]
        sentence = " ".join(words) + ". "
        chunks.append(sentence)
        size += len(sentence)
    return "".join(chunks).strip() + "\n"


if __name__ == "__main__":
    out = Path(__file__).parent / "toy_corpus.txt"
    out.write_text(generate(), encoding="utf-8")
    print(f"wrote {out} ({out.stat().st_size} bytes)")
