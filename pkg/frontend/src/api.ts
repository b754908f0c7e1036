/**
 * Typed client for the inference service. All numbers shown in the UI come
 * verbatim from these responses; the client never computes probabilities.
 *
 * Each logical channel (predict, saliency, mcq, vocab) keeps only its
 * latest request in flight: a newer call aborts the previous one, so stale
 * responses can never overwrite fresh state.
 */

export interface TokenSpec {
  kind: "AGE" | "CONCEPT";
  value: string;
}

export interface Candidate {
  concept: string;
  label: string;
  probability: number;
}

export interface VocabMatch {
  concept: string;
  label: string;
  frequency: number;
}

export interface McqOption {
  concept: string;
  label: string;
  probability: number;
}

export interface SaliencyResponse {
  tokens: TokenSpec[];
  weights: number[];
  target: string;
  target_label?: string;
  target_log_prob: number;
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    public code: string,
    public detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

/** Thrown internally when a newer request supersedes this one. */
export class Superseded extends Error {}

export class ApiClient {
  private inflight = new Map<string, AbortController>();

  constructor(private base: string = "") {}

  private async request<T>(
    channel: string,
    path: string,
    init?: RequestInit,
  ): Promise<T> {
    this.inflight.get(channel)?.abort();
    const controller = new AbortController();
    this.inflight.set(channel, controller);
    let response: Response;
    try {
      response = await fetch(this.base + path, {
        ...init,
        signal: controller.signal,
      });
    } catch (err) {
      if (controller.signal.aborted) throw new Superseded();
      throw err; // network failure: the caller shows the outage banner
    }
    if (this.inflight.get(channel) === controller) {
      this.inflight.delete(channel);
    }
    if (!response.ok) {
      let code = "error";
      let detail = response.statusText;
      try {
        const body = await response.json();
        code = body.error ?? code;
        detail = body.detail ?? detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ServiceError(response.status, code, detail);
    }
    return (await response.json()) as T;
  }

  private post<T>(channel: string, path: string, body: unknown): Promise<T> {
    return this.request<T>(channel, path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  health(): Promise<{ status: string }> {
    return this.request("health", "/v1/health");
  }

  vocab(q: string, limit = 8): Promise<VocabMatch[]> {
    const params = new URLSearchParams({ q, limit: String(limit) });
    return this.request<{ matches: VocabMatch[] }>(
      "vocab",
      `/v1/vocab?${params}`,
    ).then((r) => r.matches);
  }

  predict(tokens: TokenSpec[], topK = 8): Promise<Candidate[]> {
    return this.post<{ candidates: Candidate[] }>("predict", "/v1/predict", {
      tokens,
      top_k: topK,
    }).then((r) => r.candidates);
  }

  mcq(history: TokenSpec[], options: string[]): Promise<McqOption[]> {
    return this.post<{ options: McqOption[] }>("mcq", "/v1/mcq", {
      history,
      options,
    }).then((r) => r.options);
  }

  saliency(history: TokenSpec[]): Promise<SaliencyResponse> {
    return this.post<SaliencyResponse>("saliency", "/v1/saliency", {
      history,
    });
  }
}
