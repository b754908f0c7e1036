/**
 * Multiple-choice differential panel: the user lists candidate disorders,
 * the server renormalises the model's probabilities over exactly that set,
 * and the panel renders descending bars (the published figure's P column).
 */

import type { McqOption } from "../api";

export interface McqPanel {
  element: HTMLElement;
  options(): string[];
  renderResults(options: McqOption[]): void;
  setError(message: string | null): void;
}

export function createMcqPanel(onChange: () => void): McqPanel {
  const element = document.createElement("section");
  element.className = "mcq";
  element.innerHTML = `
    <h2>Differential (multiple choice)</h2>
    <div class="option-list"></div>
    <div class="entry">
      <input class="option-input" placeholder="concept code" size="20">
      <button class="add-option">add option</button>
      <span class="mcq-error"></span>
    </div>
    <div class="bars"></div>
  `;
  const list = element.querySelector<HTMLElement>(".option-list")!;
  const input = element.querySelector<HTMLInputElement>(".option-input")!;
  const bars = element.querySelector<HTMLElement>(".bars")!;
  const error = element.querySelector<HTMLElement>(".mcq-error")!;
  const chosen: string[] = [];

  function renderOptions(): void {
    list.replaceChildren(
      ...chosen.map((code, i) => {
        const chip = document.createElement("span");
        chip.className = "chip concept";
        const label = document.createElement("b");
        label.textContent = code;
        const remove = document.createElement("button");
        remove.textContent = "×";
        remove.addEventListener("click", () => {
          chosen.splice(i, 1);
          renderOptions();
          onChange();
        });
        chip.append(label, remove);
        return chip;
      }),
    );
  }

  element.querySelector(".add-option")!.addEventListener("click", () => {
    const code = input.value.trim();
    if (!code) return;
    if (chosen.includes(code)) {
      error.textContent = "options must be distinct";
      return;
    }
    error.textContent = "";
    chosen.push(code);
    input.value = "";
    renderOptions();
    onChange();
  });

  return {
    element,
    options: () => [...chosen],
    renderResults(options: McqOption[]) {
      bars.replaceChildren(
        ...options.map((o) => {
          const row = document.createElement("div");
          row.className = "mcq-row";
          const bar = document.createElement("div");
          bar.className = "bar";
          bar.style.width = `${Math.max(1, Math.round(o.probability * 100))}%`;
          const label = document.createElement("span");
          label.textContent = o.label;
          const value = document.createElement("code");
          value.textContent = String(o.probability); // verbatim server value
          row.append(bar, label, value);
          return row;
        }),
      );
    },
    setError(message: string | null) {
      error.textContent = message ?? "";
    },
  };
}
