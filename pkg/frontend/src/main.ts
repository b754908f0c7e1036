/**
 * Probe console wiring: compose a what-if timeline, read ranked
 * next-disorder forecasts and saliency, pose differentials, iterate.
 * Every edit re-queries the service (latest request wins); every server
 * failure surfaces in the banner; timeline state lives in the URL hash.
 */

import { ApiClient, ServiceError, Superseded } from "./api";
import { TimelineDraft } from "./state";
import { createBanner } from "./ui/banner";
import { createComposer } from "./ui/composer";
import { createMcqPanel } from "./ui/mcq";
import { createSaliencyStrip } from "./ui/saliency";

export function mountApp(root: HTMLElement, api: ApiClient): {
  draft: TimelineDraft;
  refresh: () => Promise<void>;
} {
  const draft = TimelineDraft.fromHash(
    typeof location !== "undefined" ? location.hash : "",
  );
  const banner = createBanner(() => void refresh());
  const composer = createComposer(draft, api);
  const mcq = createMcqPanel(() => void refreshMcq());
  const strip = createSaliencyStrip();
  root.replaceChildren(banner.element, composer.element, strip.element,
                       mcq.element);

  function reportFailure(err: unknown): void {
    if (err instanceof Superseded) return;
    if (err instanceof ServiceError) {
      if (err.status === 422) {
        composer.setInlineError(err.detail); // bad token, not an outage
        return;
      }
      banner.show(`service error (${err.status}): ${err.detail}`);
      return;
    }
    banner.show("service unreachable");
  }

  async function refreshMcq(): Promise<void> {
    const options = mcq.options();
    if (draft.empty || options.length < 2) {
      mcq.renderResults([]);
      return;
    }
    try {
      mcq.renderResults(await api.mcq(draft.tokens, options));
      mcq.setError(null);
    } catch (err) {
      if (err instanceof ServiceError && err.status === 422) {
        mcq.setError(err.detail);
        return;
      }
      reportFailure(err);
    }
  }

  async function refresh(): Promise<void> {
    composer.renderChips();
    if (typeof location !== "undefined") {
      history.replaceState(null, "", "#" + draft.toHash());
    }
    if (draft.empty) {
      composer.renderPredictions([]);
      strip.clear();
      return;
    }
    try {
      const [candidates, saliency] = await Promise.all([
        api.predict(draft.tokens),
        api.saliency(draft.tokens),
      ]);
      banner.hide();
      composer.setInlineError(null);
      composer.renderPredictions(candidates);
      strip.render(saliency);
    } catch (err) {
      reportFailure(err);
    }
    await refreshMcq();
  }

  draft.subscribe(() => void refresh());
  void refresh();
  return { draft, refresh };
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mountApp(document.getElementById("app")!, new ApiClient(""));
}
