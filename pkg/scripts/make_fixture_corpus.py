"""Generate the synthetic fixture corpus used by configs/example.yaml and the
end-to-end tests.

Everything is drawn from a seeded RNG, so the same seed always writes the same
bytes. The corpus has subtitle files (svt, smdb, youtube), an aligned-sentence
manifest (riksdag), a read-speech manifest (dialects, nst), plus the exchange
files the pipeline expects from outside: ASR hypotheses, language detections,
tokenizer output and evaluation pairs.

    python3 scripts/make_fixture_corpus.py [--out data/fixture] [--seed 0]
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import random
import tempfile
from pathlib import Path

from asrcurate.config import load_config
from asrcurate.manifest import ALIGNED_SENTENCE, AudioDocument, Observation, dumps_document
from asrcurate.metrics import PRIMARY, SECONDARY
from asrcurate.pipeline import read_chunks, read_manifest, run_ingest, run_pack
from asrcurate.seeding import stable_hash

ROOT = Path(__file__).resolve().parents[1]

WORDS = (
    "och i att det som en på är av för med till den har de inte om ett han men "
    "vi var jag hon när kan så sig ska efter år nu också bara få mycket här "
    "regeringen riksdagen kommunen skolan barnen sommaren vintern vädret morgon "
    "kväll Stockholm Göteborg Malmö Norrland fjällen havet skogen sjön staden "
    "nyheter debatt förslag budget ekonomi arbete bostäder vården polisen tåget "
    "bilen vägen huset köket maten kaffe bröd fisk älgen hunden katten "
    "säger tror vet vill måste gör kommer går ser tar ger blir fick hade "
    "viktigt svårt bra dålig stor liten ny gammal lång kort snabbt långsamt"
).split()
OTHER_LANGS = ("no", "da", "en", "fi")
SUBTITLE_SETS = (("svt", 18, "srt"), ("smdb", 12, "srt"), ("youtube", 10, "vtt"))


def sentence(rng: random.Random, lo=3, hi=12) -> str:
    words = [rng.choice(WORDS) for _ in range(rng.randint(lo, hi))]
    text = " ".join(words)
    text = text[0].upper() + text[1:]
    return text + rng.choice([".", ".", "?", "!", ","])


def timeline(rng: random.Random, n_obs: int, min_len=1.0, max_len=7.0):
    """Observation intervals with short pauses and an occasional long silence."""
    t = rng.uniform(0.5, 3.0)
    out = []
    for _ in range(n_obs):
        r = rng.random()
        if r < 0.05:
            t += rng.uniform(12, 45)
        elif r < 0.75:
            t += rng.uniform(0.0, 1.5)
        length = rng.uniform(min_len, max_len)
        if rng.random() < 0.01:
            length = rng.uniform(31, 38)  # a block the packer has to flag
        out.append((round(t, 3), round(t + length, 3)))
        t += length
    return out


def timecode(t: float, sep: str) -> str:
    millis = round(t * 1000)
    h, rem = divmod(millis, 3_600_000)
    m, rem = divmod(rem, 60_000)
    s, ms = divmod(rem, 1000)
    return f"{h:02d}:{m:02d}:{s:02d}{sep}{ms:03d}"


def subtitle_file(rng, intervals, fmt) -> str:
    sep = "," if fmt == "srt" else "."
    blocks = ["WEBVTT"] if fmt == "vtt" else []
    for i, (s, e) in enumerate(intervals, 1):
        text = sentence(rng)
        if rng.random() < 0.3:  # two-line block
            cut = text.find(" ", len(text) // 2)
            if cut > 0:
                text = text[:cut] + "\n" + text[cut + 1:]
        if rng.random() < 0.05:
            text = f"<i>{text}</i>"
        blocks.append(f"{i}\n{timecode(s, sep)} --> {timecode(e, sep)}\n{text}")
    return "\n\n".join(blocks) + "\n"


def manifest_doc(rng, doc_id, dataset, n_obs, kind) -> AudioDocument:
    intervals = timeline(rng, n_obs, 1.5, 9.0)
    obs = tuple(Observation(f"{doc_id}:{i:05d}", s, e, sentence(rng, 4, 16), kind) for i, (s, e) in enumerate(intervals))
    return AudioDocument(doc_id, f"media/{dataset}/{doc_id}.wav", dataset, round(intervals[-1][1] + 2.0, 3), obs)


# --- simulated outside systems ---------------------------------------------

def perturb(rng: random.Random, text: str, error_rate: float) -> str:
    out = []
    for w in text.split():
        r = rng.random()
        if r < error_rate / 3:
            continue
        if r < 2 * error_rate / 3:
            out.append(rng.choice(WORDS))
        elif r < error_rate:
            out += [w, rng.choice(WORDS)]
        else:
            out.append(w)
    return " ".join(out)


def hypothesis_text(rng: random.Random, ref: str) -> str:
    r = rng.random()
    if r < 0.45:
        hyp = perturb(rng, ref, 0.02)
    elif r < 0.75:
        hyp = perturb(rng, ref, 0.15)
    elif r < 0.9:
        hyp = perturb(rng, ref, 0.5)
    else:
        hyp = " ".join(rng.choice(WORDS) for _ in range(rng.randint(2, 10)))
    if rng.random() < 0.1:  # misaligned edge: drop the first or last words
        words = hyp.split()
        hyp = " ".join(words[2:] if rng.random() < 0.5 else words[:-2])
    return hyp


def toy_tokens(text: str) -> list[int]:
    """Stand-in tokenizer: one id per word below the special-token range."""
    return [100 + int(stable_hash(w.lower()), 16) % 49000 for w in text.split()]


def build(out: Path, seed: int, config: Path):
    rng = random.Random(seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "subtitles").mkdir(exist_ok=True)

    sources = []
    for dataset, n_docs, fmt in SUBTITLE_SETS:
        for i in range(n_docs):
            doc_id = f"{dataset}-{i:03d}"
            intervals = timeline(rng, rng.randint(20, 90))
            name = f"subtitles/{doc_id}.{fmt}"
            (out / name).write_text(subtitle_file(rng, intervals, fmt), encoding="utf-8")
            sources.append({"doc_id": doc_id, "subtitle": name, "media_ref": f"media/{dataset}/{doc_id}.mp4",
                            "dataset": dataset, "duration": round(intervals[-1][1] + rng.uniform(1, 20), 3)})
    (out / "sources.jsonl").write_text("".join(json.dumps(s) + "\n" for s in sources), encoding="utf-8")

    riksdag = [manifest_doc(rng, f"riksdag-{i:03d}", "riksdag", rng.randint(20, 60), ALIGNED_SENTENCE) for i in range(8)]
    read = [manifest_doc(rng, f"{ds}-{i:03d}", ds, rng.randint(10, 30), ALIGNED_SENTENCE)
            for ds in ("dialects", "nst") for i in range(4)]
    for name, docs in (("riksdag.jsonl", riksdag), ("read_speech.jsonl", read)):
        (out / name).write_text("".join(dumps_document(d) + "\n" for d in docs), encoding="utf-8")

    # run ingest and pack on the fresh inputs so the exchange files can key on chunk ids
    cfg = load_config(config)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = dataclasses.replace(cfg, paths=dataclasses.replace(
            cfg.paths, sources=out / "sources.jsonl",
            manifests=(out / "riksdag.jsonl", out / "read_speech.jsonl"),
            manifest=tmp / "manifest.jsonl", chunks=tmp / "chunks.jsonl",
        ))
        run_ingest(cfg)
        run_pack(cfg)
        docs = read_manifest(cfg.paths.manifest)
        chunks = read_chunks(cfg.paths.chunks)

    tokens = [{"obs_id": o.obs_id, "tokens": toy_tokens(o.text)} for d in docs for o in d.observations]

    hyps, detections = [], []
    for c in chunks:
        if c.is_nonspeech:
            lang = "nospeech" if rng.random() < 0.85 else "sv"
            detections.append({"chunk_id": c.chunk_id, "language": lang, "confidence": round(rng.uniform(0.6, 1), 3)})
            continue
        r = rng.random()
        if r < 0.02:
            continue  # detector never answered: the chunk is deferred
        lang = "sv" if r < 0.92 else rng.choice(OTHER_LANGS)
        detections.append({"chunk_id": c.chunk_id, "language": lang, "confidence": round(rng.uniform(0.5, 1), 3)})
        hyps.append({"chunk_id": c.chunk_id, "source": PRIMARY, "text": hypothesis_text(rng, c.reference_text),
                     "model_id": "whisper-large-v3"})
        if c.dataset != "nst" and rng.random() < 0.97:
            hyps.append({"chunk_id": c.chunk_id, "source": SECONDARY,
                         "text": hypothesis_text(rng, c.reference_text), "model_id": "wav2vec2-sv"})

    pairs = []
    for test_set in ("cv", "fleurs", "nst"):
        refs = [sentence(rng, 4, 14) for _ in range(40)]
        for system, rate in (("whisper-small", 0.25), ("finetuned-small", 0.12)):
            pairs += [{"test_set": test_set, "system": system, "reference": ref,
                       "hypothesis": perturb(rng, ref, rate)} for ref in refs]

    for name, recs in (("tokens.jsonl", tokens), ("hypotheses.jsonl", hyps),
                       ("detections.jsonl", detections), ("eval_pairs.jsonl", pairs)):
        (out / name).write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in recs), encoding="utf-8")
    return {"documents": len(docs), "chunks": len(chunks), "hypotheses": len(hyps), "detections": len(detections)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=ROOT / "data" / "fixture")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "example.yaml")
    args = ap.parse_args()
    print(json.dumps(build(args.out, args.seed, args.config)))


if __name__ == "__main__":
    main()
