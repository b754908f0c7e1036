/**
 * Timeline composer: token chips with remove/reorder controls, an age box,
 * a concept box with vocabulary autocomplete, and the ranked next-disorder
 * panel that refreshes after every edit.
 */

import type { ApiClient, Candidate, VocabMatch } from "../api";
import type { TimelineDraft } from "../state";

export interface Composer {
  element: HTMLElement;
  renderChips(): void;
  renderPredictions(candidates: Candidate[]): void;
  setInlineError(message: string | null): void;
}

export function createComposer(
  draft: TimelineDraft,
  api: ApiClient,
): Composer {
  const element = document.createElement("section");
  element.className = "composer";
  element.innerHTML = `
    <h2>Patient timeline</h2>
    <div class="chips"></div>
    <div class="entry">
      <input class="age-input" placeholder="age (0-120)" size="10">
      <button class="add-age">add age</button>
      <span class="concept-box">
        <input class="concept-input" placeholder="search disorders..." size="24">
        <ul class="suggestions hidden"></ul>
      </span>
      <button class="clear">clear</button>
      <span class="inline-error"></span>
    </div>
    <h2>Ranked next disorders</h2>
    <ol class="predictions"><li class="placeholder">add tokens to forecast</li></ol>
  `;

  const chips = element.querySelector<HTMLElement>(".chips")!;
  const ageInput = element.querySelector<HTMLInputElement>(".age-input")!;
  const conceptInput = element.querySelector<HTMLInputElement>(".concept-input")!;
  const suggestions = element.querySelector<HTMLUListElement>(".suggestions")!;
  const predictions = element.querySelector<HTMLOListElement>(".predictions")!;
  const inlineError = element.querySelector<HTMLElement>(".inline-error")!;

  function renderChips(): void {
    chips.replaceChildren(
      ...draft.tokens.map((tok, i) => {
        const chip = document.createElement("span");
        chip.className = `chip ${tok.kind.toLowerCase()}`;
        const label = document.createElement("b");
        label.textContent = tok.kind === "AGE" ? `age ${tok.value}` : tok.value;
        const left = document.createElement("button");
        left.textContent = "◀";
        left.title = "move earlier";
        left.addEventListener("click", () => draft.move(i, -1));
        const right = document.createElement("button");
        right.textContent = "▶";
        right.title = "move later";
        right.addEventListener("click", () => draft.move(i, +1));
        const remove = document.createElement("button");
        remove.textContent = "×";
        remove.title = "remove";
        remove.addEventListener("click", () => draft.removeAt(i));
        chip.append(label, left, right, remove);
        return chip;
      }),
    );
  }

  function renderPredictions(candidates: Candidate[]): void {
    if (candidates.length === 0) {
      predictions.innerHTML = '<li class="placeholder">add tokens to forecast</li>';
      return;
    }
    predictions.replaceChildren(
      ...candidates.map((c) => {
        const li = document.createElement("li");
        li.className = "prediction";
        const bar = document.createElement("div");
        bar.className = "bar";
        bar.style.width = `${Math.max(1, Math.round(c.probability * 100))}%`;
        const label = document.createElement("span");
        label.textContent = c.label;
        const value = document.createElement("code");
        value.textContent = String(c.probability); // verbatim server value
        li.append(bar, label, value);
        return li;
      }),
    );
  }

  element.querySelector(".add-age")!.addEventListener("click", () => {
    const problem = draft.addAge(ageInput.value);
    setInlineError(problem);
    if (!problem) ageInput.value = "";
  });

  element.querySelector(".clear")!.addEventListener("click", () => draft.clear());

  let suggestionRows: VocabMatch[] = [];
  async function refreshSuggestions(): Promise<void> {
    const q = conceptInput.value.trim();
    if (!q) {
      suggestions.classList.add("hidden");
      return;
    }
    try {
      suggestionRows = await api.vocab(q);
    } catch {
      return; // outage is surfaced by the main refresh path
    }
    suggestions.replaceChildren(
      ...suggestionRows.map((m) => {
        const li = document.createElement("li");
        li.textContent = `${m.label} (${m.concept})`;
        li.addEventListener("mousedown", () => {
          draft.addConcept(m.concept);
          conceptInput.value = "";
          suggestions.classList.add("hidden");
        });
        return li;
      }),
    );
    suggestions.classList.toggle("hidden", suggestionRows.length === 0);
  }
  conceptInput.addEventListener("input", () => void refreshSuggestions());

  function setInlineError(message: string | null): void {
    inlineError.textContent = message ?? "";
  }

  renderChips();
  return { element, renderChips, renderPredictions, setInlineError };
}
