# Description-aware mention enhancement, step by step, fully offline.
# Run: python3 demos/dme_walkthrough.py
from moe_linker.data import DatasetSplit, MentionRecord
from moe_linker.dme import (EnhancementCache, build_ranking_prompt, enhance_split, parse_choice,
                            rank_descriptions)
from moe_linker.kb import FixtureKb, retrieve_candidates
from moe_linker.llm import MockBackend

kb = FixtureKb.packaged()

# 1. same-name candidates from the knowledge base
word, context = "Black Panther", "Chadwick Boseman at the premiere in Los Angeles."
candidates = retrieve_candidates(word, kb)
for c in candidates:
    print(c.qid, "|", c.description)

# 2. the ranking prompt an LLM would see
prompt = build_ranking_prompt(word, context, candidates)
print("\n" + prompt)

# 3. replies are parsed leniently; anything unusable means "no choice"
for reply in ("2", "Answer: 3.", "the second one", "7"):
    print(f"{reply!r:>18} -> {parse_choice(reply, len(candidates))}")

# 4. a scripted backend and a cache
cache = EnhancementCache()
sel = rank_descriptions(word, context, candidates, MockBackend(reply="1"), cache)
print("\nchosen:", sel.chosen.description, "| fallback:", sel.fallback_used)
sel = rank_descriptions(word, context, candidates, MockBackend(reply="1"), cache)
print("cache hits/misses:", cache.hits, cache.misses)

# garbage reply: fall back to the first candidate
sel = rank_descriptions(word, "another context", candidates, MockBackend(reply="no idea"), cache)
print("garbage reply -> fallback used:", sel.fallback_used, "|", sel.chosen.description)

# 5. a whole split
split = DatasetSplit("train", (
    MentionRecord("a", "Jaguar", "Spotted near the river at dusk.", "E1"),
    MentionRecord("b", "Mercury", "Closest to the sun.", "E2"),
    MentionRecord("c", "Zebra", "Stripes everywhere.", "E3"),
))
enhanced, report = enhance_split(split, kb, MockBackend(seed=0))
for rec in enhanced.mentions:
    print(f"{rec.id}: {rec.enhanced_context}")
print(report.to_json())
