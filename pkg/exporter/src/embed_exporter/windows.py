"""Entity mention scan and context-window extraction.

The training pipeline extracts a snippet of 30 characters either side
of an entity mention before scoring sentiment.  Exported rows must be
interchangeable with locally featurized ones, so this module follows
the same contract to the byte:

- the scan runs left to right and never overlaps mentions; at each
  offset the longest entity wins, list order breaking length ties, and
  the scan resumes after the match
- comparison is casefolded; a candidate is rejected when it sits inside
  a longer alphanumeric token on either side
- the window is clipped at the text ends, never padded

A shared fixture file of 50 cases pins both implementations to the
same snippets.
"""

from dataclasses import dataclass

WINDOW_RADIUS = 30


@dataclass(frozen=True)
class Mention:
    entity: str
    start: int
    end: int


def _ranked(entities) -> list[tuple[str, str]]:
    order = sorted(range(len(entities)), key=lambda i: (-len(entities[i]), i))
    return [(entities[i], entities[i].casefold()) for i in order if entities[i]]


def find_mentions(text: str, entities) -> list[Mention]:
    ranked = _ranked(list(entities))
    mentions: list[Mention] = []
    n = len(text)
    i = 0
    while i < n:
        hit = None
        for entity, folded in ranked:
            end = i + len(entity)
            if end > n or text[i:end].casefold() != folded:
                continue
            if i > 0 and text[i - 1].isalnum() and entity[0].isalnum():
                continue
            if end < n and text[end].isalnum() and entity[-1].isalnum():
                continue
            hit = Mention(entity=entity, start=i, end=end)
            break
        if hit is not None:
            mentions.append(hit)
            i = hit.end
        else:
            i += 1
    return mentions


def context_window(text: str, mention: Mention, radius: int = WINDOW_RADIUS) -> tuple[str, int, int]:
    """(snippet, start, end) of ``radius`` characters around the mention."""
    start = max(0, mention.start - radius)
    end = min(len(text), mention.end + radius)
    return text[start:end], start, end
