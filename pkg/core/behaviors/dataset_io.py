# dataset_io.py
# --------------------------------------------------------------------------------------
# Purpose:
#   JSONL dataset files: one QAExample per line, integer token ids, sorted keys
#   (same examples in -> same bytes out)
# --------------------------------------------------------------------------------------

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence, Union

import orjson

from core.behaviors.corpus import BehaviorLabel
from core.behaviors.prompts import ConditioningPrompt, FactTriple
from core.behaviors.qa import QAExample
from core.errors import FormatError
from core.utils.logging_setup import get_logger

logger = get_logger("dataset_io")

PathLike = Union[str, Path]


def example_to_record(ex: QAExample) -> Dict:
    return {
        "uid": ex.uid,
        "template": ex.template,
        "question": list(ex.question),
        "prompt": list(ex.prompt.tokens),
        "shots": ex.prompt.shots,
        "label": ex.label.to_dict(),
        "answer": "Yes" if ex.answer_yes else "No",
        "fact": ex.fact.as_list() if ex.fact else None,
    }


def record_to_example(rec: Dict) -> QAExample:
    try:
        label = BehaviorLabel.from_dict(rec["label"])
        prompt = ConditioningPrompt(tuple(int(t) for t in rec["prompt"]), int(rec["shots"]), label)
        fact = FactTriple(*[int(x) for x in rec["fact"]]) if rec.get("fact") else None
        if rec["answer"] not in ("Yes", "No"):
            raise ValueError(f"answer must be Yes/No, got {rec['answer']!r}")
        return QAExample(rec["uid"], tuple(int(t) for t in rec["question"]), prompt,
                         rec["answer"] == "Yes", rec["template"], fact)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad QA record: {exc}") from exc


def write_qa_set(path: PathLike, examples: Sequence[QAExample]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        for ex in examples:
            f.write(orjson.dumps(example_to_record(ex), option=orjson.OPT_SORT_KEYS))
            f.write(b"\n")
    logger.info("Wrote %d examples to %s", len(examples), path)
    return path


def read_qa_set(path: PathLike) -> List[QAExample]:
    out: List[QAExample] = []
    with Path(path).open("rb") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = orjson.loads(line)
            except orjson.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            out.append(record_to_example(rec))
    return out
