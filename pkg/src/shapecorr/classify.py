"""Zero-shot shape classification: caption each view, then unify the proposals."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import prompts
from .mesh import Mesh
from .oracle import OracleBackend, OracleError
from .render import classification_viewpoints, render
from .textnorm import has_alphabetic, normalize_label


class UnificationError(OracleError):
    """The chat oracle returned nothing usable as a class label."""


@dataclass(frozen=True)
class ClassProposals:
    shape_id: str
    proposals: tuple[tuple[int, str], ...]  # (view index, caption text)

    def texts(self) -> list[str]:
        return [t for _, t in self.proposals]


@dataclass(frozen=True)
class ClassLabel:
    label: str
    method: str  # "unified" or "voting"


def propose_classes(mesh: Mesh, oracle: OracleBackend, k: int = 12, image_size: int = 512) -> ClassProposals:
    """Render the classification view grid and caption every view.

    Captions are issued concurrently up to the backend's in-flight limit;
    results keep view order. Any view failing after the backend's retries
    aborts the whole proposal pass with the view index attached.
    """
    cameras = classification_viewpoints(k, image_size=image_size)
    prompt = prompts.caption_prompt()

    def one(idx_cam):
        idx, cam = idx_cam
        view = render(mesh, cam)
        view.view_index = idx
        try:
            text = oracle.caption(view, prompt)
        except OracleError as err:
            # preserve the error class so exit-code mapping still sees it
            raise type(err)(f"caption failed for view {idx}: {err}") from err
        if not text.strip():
            raise OracleError(f"caption failed for view {idx}: empty response")
        return idx, text

    workers = oracle.max_in_flight or 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(cameras))) as pool:
            results = list(pool.map(one, enumerate(cameras)))
    else:
        results = [one(ic) for ic in enumerate(cameras)]
    results.sort(key=lambda r: r[0])
    return ClassProposals(shape_id=mesh.id, proposals=tuple(results))


def unify_classes(proposals: ClassProposals, oracle: OracleBackend) -> ClassLabel:
    """Single class label from the proposals via the chat oracle.

    A lone proposal, or unanimity after normalization, short-circuits the chat
    call: it cannot change a correct answer and saves a round trip.
    """
    texts = proposals.texts()
    if not texts:
        raise ValueError("no proposals to unify")
    normalized = [normalize_label(t) for t in texts]
    if len(set(normalized)) == 1:
        return ClassLabel(label=normalized[0], method="unified")

    prompt = prompts.unify_prompt(texts)
    response = oracle.chat([{"role": "user", "content": prompt}])
    label = normalize_label(response)
    if not has_alphabetic(label):
        raise UnificationError(f"chat oracle returned no usable class label: {response!r}")
    return ClassLabel(label=label, method="unified")


def majority_vote(proposals: ClassProposals) -> ClassLabel:
    """Baseline: exact-string mode of the normalized proposals, ties lexicographic."""
    texts = proposals.texts()
    if not texts:
        raise ValueError("no proposals to vote on")
    counts: dict[str, int] = {}
    for t in texts:
        n = normalize_label(t)
        counts[n] = counts.get(n, 0) + 1
    top = max(counts.values())
    winner = min(label for label, c in counts.items() if c == top)
    return ClassLabel(label=winner, method="voting")
