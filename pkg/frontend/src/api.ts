/**
 * Thin client for the rating service HTTP API. This module is the only
 * place the frontend talks to the network.
 *
 * Endpoints used:
 *   GET  /api/eval/next?rater=R
 *   POST /api/eval/rating
 *   GET  /api/eval/stats
 */

export interface Assignment {
  video_id: string;
  media_url: string;
  cause: string;
  effect: string;
}

export interface NextResponse {
  done: boolean;
  video_id: string | null;
  media_url: string | null;
  cause: string | null;
  effect: string | null;
}

export interface RatingPayload {
  rater_id: string;
  video_id: string;
  causal_accuracy: number;
  temporal_coherence: number;
  relevance: number;
}

export interface RatingAck {
  accepted: boolean;
  n_ratings: number;
}

/** Service rejected the request (4xx/5xx); `detail` is its error body. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: unknown,
  ) {
    super(`service returned ${status}`);
    this.name = "ApiError";
  }
}

/** Request never reached the service (connection refused, DNS, abort). */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super("rating service unreachable");
    this.name = "NetworkError";
    this.cause = cause;
  }
}

type FetchLike = typeof fetch;

export interface ApiClient {
  fetchNext(raterId: string): Promise<NextResponse>;
  submitRating(payload: RatingPayload): Promise<RatingAck>;
  fetchStats(): Promise<Record<string, unknown>>;
  /** Absolute URL for a media path returned by the service. */
  mediaUrl(path: string): string;
}

export function createClient(baseUrl: string, fetchImpl?: FetchLike): ApiClient {
  const base = baseUrl.replace(/\/+$/, "");
  const doFetch: FetchLike = fetchImpl ?? ((...args) => fetch(...args));

  async function request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await doFetch(`${base}${path}`, init);
    } catch (err) {
      throw new NetworkError(err);
    }
    const body = await response.json().catch(() => null);
    if (!response.ok) {
      throw new ApiError(response.status, body);
    }
    return body as T;
  }

  return {
    fetchNext(raterId: string): Promise<NextResponse> {
      return request<NextResponse>(`/api/eval/next?rater=${encodeURIComponent(raterId)}`);
    },

    submitRating(payload: RatingPayload): Promise<RatingAck> {
      return request<RatingAck>("/api/eval/rating", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
      });
    },

    fetchStats(): Promise<Record<string, unknown>> {
      return request<Record<string, unknown>>("/api/eval/stats");
    },

    mediaUrl(path: string): string {
      return path.startsWith("http") ? path : `${base}${path}`;
    },
  };
}
