/** Outage banner: every server failure is surfaced, nothing fails silently. */

export interface Banner {
  show(message: string): void;
  hide(): void;
  element: HTMLElement;
}

export function createBanner(onRetry: () => void): Banner {
  const element = document.createElement("div");
  element.className = "banner hidden";
  const text = document.createElement("span");
  const retry = document.createElement("button");
  retry.textContent = "retry";
  retry.addEventListener("click", () => onRetry());
  element.append(text, retry);
  return {
    element,
    show(message: string) {
      text.textContent = message;
      element.classList.remove("hidden");
    },
    hide() {
      element.classList.add("hidden");
    },
  };
}
