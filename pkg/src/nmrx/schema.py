"""Schema tags carried by every JSON document the toolkit writes."""

from __future__ import annotations

from .errors import SchemaVersionError

KINDS = {
    "fid": 1,
    "spectrum": 1,
    "corrected": 1,
    "annotated": 1,
    "molecule": 1,
    "ranking": 1,
    "search": 1,
    "trajectory": 1,
    "report": 1,
}


def tag(kind: str) -> str:
    return f"nmrx.{kind}/{KINDS[kind]}"


def check(doc: dict, kind: str, required: bool = True) -> None:
    """Reject documents whose schema tag names another kind or version.

    Untagged documents pass when ``required`` is false (hand-written inputs).
    """
    found = doc.get("schema") if isinstance(doc, dict) else None
    if found is None:
        if required:
            raise SchemaVersionError(f"document has no schema tag; expected {tag(kind)}")
        return
    if found != tag(kind):
        raise SchemaVersionError(
            f"unsupported schema {found!r}: this reader expects {tag(kind)}"
        )
