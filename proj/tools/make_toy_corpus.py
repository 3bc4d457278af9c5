#!/usr/bin/env python3
"""Regenerates the bundled toy corpus under data/toy/.

Output is deterministic; the committed files are what the golden run uses,
so only rerun this when deliberately changing the toy data (and then
refresh tests/golden/toy as described in the README).
"""

import json
import random
import sys
from pathlib import Path

CONFIDENCE_PROMPT = ("Provide the probability that your answer is correct. Give ONLY the probability "
                     "between 0.0 and 1.0, no other words or explanation")

CAPITALS = [("France", "Paris"), ("Italy", "Rome"), ("Spain", "Madrid"), ("Germany", "Berlin"),
            ("Japan", "Tokyo"), ("Egypt", "Cairo"), ("Peru", "Lima"), ("Kenya", "Nairobi"),
            ("Norway", "Oslo"), ("Canada", "Ottawa")]
ELEMENTS = [("gold", "Au"), ("iron", "Fe"), ("silver", "Ag"), ("sodium", "Na"), ("lead", "Pb"),
            ("copper", "Cu"), ("tin", "Sn"), ("potassium", "K"), ("mercury", "Hg"), ("helium", "He")]
AUTHORS = [("Hamlet", "William Shakespeare"), ("Emma", "Jane Austen"), ("Ulysses", "James Joyce"),
           ("Dracula", "Bram Stoker"), ("Beloved", "Toni Morrison"), ("Middlemarch", "George Eliot"),
           ("Frankenstein", "Mary Shelley"), ("Lolita", "Vladimir Nabokov"), ("Walden", "Henry Thoreau"),
           ("Rebecca", "Daphne du Maurier")]

FILLER = ["The weather was mild and the market opened early in the morning.",
          "Farmers brought grain and fruit to the square before noon.",
          "A long river runs through the valley and feeds the old mills.",
          "Music from the hall could be heard across the quiet street.",
          "The library keeps maps, letters and records from past centuries.",
          "Travelers often rest at the inn near the bridge.",
          "Students read history and mathematics in the evening.",
          "The museum shows paintings, coins and tools from many regions."]

HEDGES = ["I am fairly sure about this, maybe ninety percent.",
          "Honestly I am not certain and would guess with low confidence.",
          "The probability that this is right is high, I would say 0.9.",
          "My confidence is moderate; the probability is about 0.6.",
          "Be careful: a probability between 0.0 and 1.0 expresses how likely a claim is correct.",
          "Forecasters give a probability for rain and check whether they were correct."]


def doc(doc_id, source, **fields):
    return {"id": doc_id, "source": source, "fields": fields}


def build(rng):
    pre, post = [], []
    # Pre-training: encyclopedic sentences, filler prose, confidence talk.
    for country, city in CAPITALS:
        pre.append(doc(f"pre-cap-{country.lower()}", "pre",
                       text=f"{city} is the capital of {country}. The capital city {city} has a large population."))
        pre.append(doc(f"pre-cap2-{country.lower()}", "pre",
                       text=f"Visitors to {country} usually arrive in {city}, the seat of government."))
    for element, symbol in ELEMENTS:
        pre.append(doc(f"pre-el-{element}", "pre",
                       text=f"The chemical symbol of {element} is {symbol}. {element.capitalize()} is an element."))
        pre.append(doc(f"pre-el2-{element}", "pre",
                       text=f"Chemists write {symbol} for {element} in every periodic table."))
    for book, author in AUTHORS:
        pre.append(doc(f"pre-book-{book.lower()}", "pre",
                       text=f"{book} is a novel written by {author}. Critics still discuss {book} today."))
        pre.append(doc(f"pre-book2-{book.lower()}", "pre",
                       text=f"The author {author} published {book} and other works."))
    for i in range(36):
        sentences = rng.sample(FILLER, 2)
        pre.append(doc(f"pre-filler-{i:02d}", "pre", text=" ".join(sentences)))
    for i in range(24):
        pre.append(doc(f"pre-hedge-{i:02d}", "pre",
                       text=f"{rng.choice(HEDGES)} {rng.choice(FILLER)}"))

    # Post-training: instruction-style QA pairs and confidence demonstrations.
    qa = ([(f"What is the capital of {c}?", a) for c, a in CAPITALS] +
          [(f"What is the chemical symbol of {e}?", s) for e, s in ELEMENTS] +
          [(f"Who is the author of {b}?", a) for b, a in AUTHORS])
    for i, (q, a) in enumerate(qa):
        post.append(doc(f"post-qa-{i:02d}", "post", question=q, answer=a))
    for i in range(30):
        q, a = rng.choice(qa)
        conf = rng.choice(["0.9", "0.8", "0.7", "0.95", "0.6"])
        post.append(doc(f"post-conf-{i:02d}", "post",
                        question=f"{q} {a} {CONFIDENCE_PROMPT}", answer=conf))
    for i in range(20):
        post.append(doc(f"post-chat-{i:02d}", "post",
                        question=rng.choice(["Summarize the paragraph.", "Explain the idea briefly.",
                                             "Give a short description of the place."]),
                        answer=rng.choice(FILLER)))
    assert len(pre) == 120 and len(post) == 80, (len(pre), len(post))
    return pre, post


def instances(rng):
    out = []
    picks = ([("capitals", f"What is the capital of {c}?", a, [a]) for c, a in CAPITALS[:7]] +
             [("elements", f"What is the chemical symbol of {e}?", s, [s]) for e, s in ELEMENTS[:7]] +
             [("authors", f"Who is the author of {b}?", a, [a]) for b, a in AUTHORS[:6]])
    wrong = {"capitals": ["Lyon", "Milan", "Osaka"], "elements": ["Gd", "Ir", "Si"],
             "authors": ["Charles Dickens", "Leo Tolstoy"]}
    for i, (dataset, q, gold_answer, gold) in enumerate(picks):
        inst = {"id": f"q{i:02d}", "dataset": dataset, "question": q, "gold": gold}
        mode = i % 7
        if mode == 6:
            pass  # answer and confidence generated by the desk model
        elif mode == 5:
            inst["answer"] = gold_answer
            inst["confidence"] = "very confident"  # unparseable on purpose
        elif mode in (1, 3):
            inst["answer"] = rng.choice(wrong[dataset])
            inst["confidence"] = rng.choice(["0.4", "0.55", "0.7", "The probability is 0.3."])
        else:
            inst["answer"] = gold_answer if mode != 4 else f"I think it is {gold_answer}"
            inst["confidence"] = rng.choice(["0.9", "0.85", "0.95", "0.8"])
        out.append(inst)
    return out


def main():
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "toy"
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240601)
    pre, post = build(rng)
    tests = instances(rng)
    for name, rows in (("pre.jsonl", pre), ("post.jsonl", post), ("test.jsonl", tests)):
        with open(root / name, "w", encoding="utf-8") as f:
            for row in rows:
                f.write(json.dumps(row, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
