/**
 * Saliency strip: each context token shaded by its attribution weight, the
 * forecast disorder pinned on the right, numeric weight on hover. The
 * strip is replaced atomically per response (no stale mixes).
 */

import type { SaliencyResponse } from "../api";

export interface SaliencyStrip {
  element: HTMLElement;
  render(result: SaliencyResponse): void;
  clear(): void;
}

export function createSaliencyStrip(): SaliencyStrip {
  const element = document.createElement("section");
  element.className = "saliency";
  element.innerHTML = `
    <h2>Which tokens drove the forecast?</h2>
    <div class="strip"><span class="placeholder">no forecast yet</span></div>
  `;
  const strip = element.querySelector<HTMLElement>(".strip")!;

  return {
    element,
    render(result: SaliencyResponse) {
      const cells = result.tokens.map((tok, i) => {
        const cell = document.createElement("span");
        cell.className = "cell";
        const weight = result.weights[i];
        cell.style.background = `rgba(188, 84, 42, ${weight})`;
        cell.textContent =
          tok.kind === "AGE" ? `[${tok.value}]` : tok.value;
        cell.title = String(weight); // verbatim server value on hover
        return cell;
      });
      const arrow = document.createElement("span");
      arrow.className = "arrow";
      arrow.textContent = "→";
      const target = document.createElement("span");
      target.className = "cell target";
      target.textContent = result.target_label ?? result.target;
      strip.replaceChildren(...cells, arrow, target);
    },
    clear() {
      strip.innerHTML = '<span class="placeholder">no forecast yet</span>';
    },
  };
}
