/** Plain-DOM rendering of the review card and progress bar. */

import { ReviewState } from "./controller";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function render(root: HTMLElement, state: ReviewState): void {
  root.replaceChildren();

  if (state.banner) {
    root.appendChild(el("div", "banner", state.banner));
  }

  if (state.summary) {
    const s = state.summary;
    const reasons = Object.entries(s.discarded_by_reason)
      .map(([code, n]) => `r${code}: ${n}`)
      .join("  ");
    root.appendChild(
      el(
        "div",
        "progress",
        `pending ${s.pending}  kept ${s.kept}  discarded ${s.discarded}  (${reasons})`,
      ),
    );
  }

  if (state.current === null) {
    root.appendChild(
      el("div", "done", state.done ? "Queue complete." : "Loading…"),
    );
    return;
  }

  const card = el("div", "card");
  // the assembly overview comes first: reviewers orient on the whole
  // structure before judging the highlighted parts
  const assembly = el("figure", "assembly");
  const assemblyImg = el("img");
  assemblyImg.src = state.current.assembly_image_url;
  assemblyImg.alt = `assembly ${state.current.assembly_id}`;
  assembly.appendChild(assemblyImg);
  assembly.appendChild(el("figcaption", undefined, "Assembly"));
  card.appendChild(assembly);

  const pair = el("div", "pair");
  const merged = el("figure", "merged");
  if (state.current.merged_image_available && state.current.merged_image_url) {
    const mergedImg = el("img");
    mergedImg.src = state.current.merged_image_url;
    mergedImg.alt = "merged selected parts";
    merged.appendChild(mergedImg);
  } else {
    merged.appendChild(el("div", "missing", "merged render unavailable"));
  }
  merged.appendChild(el("figcaption", undefined, "Selected parts (merged)"));
  pair.appendChild(merged);

  const spec = el("div", "spec");
  spec.appendChild(el("p", "sentence", state.current.specification));
  spec.appendChild(
    el("p", "gt", `candidate parts: ${state.current.gt_filenames.join(", ")}`),
  );
  pair.appendChild(spec);
  card.appendChild(pair);

  const help = state.awaitingReason
    ? "reason? 2 similar descriptions / 3 assembly indistinguishable / 4 other ambiguity (Esc cancels)"
    : "K keep · D discard";
  card.appendChild(el("div", "keys", help));
  root.appendChild(card);
}
