"""Shared builders for test fixtures."""

import json


def corpus_line(doc_id, sentences, section_id="s0", title=None, extra_sections=()):
    sections = [{"id": section_id, "heading": "h", "sentences": list(sentences)}]
    sections += list(extra_sections)
    return json.dumps({"id": doc_id, "title": title or doc_id, "sections": sections})


def thread_line(thread_id, turns, subreddit=None, title=None, created=None):
    """turns: list of (author, text, links) or (author, text)."""
    records = []
    for turn in turns:
        author, text = turn[0], turn[1]
        links = turn[2] if len(turn) > 2 else []
        records.append(
            {
                "author": author,
                "text": text,
                "links": [{"doc": d, "section": s} for d, s in links],
            }
        )
    record = {"id": thread_id, "turns": records}
    if subreddit is not None:
        record["subreddit"] = subreddit
    if title is not None:
        record["title"] = title
    if created is not None:
        record["created"] = created
    return json.dumps(record)
