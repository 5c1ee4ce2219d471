import {
  ApiError,
  ExperimentManifest,
  JudgementResponse,
  PairAssignment,
  ScoreSnapshot,
} from "./types";

async function parseError(response: Response): Promise<ApiError> {
  let code = "http_error";
  let message = `${response.status}`;
  try {
    const body = await response.json();
    code = body?.error?.code ?? code;
    message = body?.error?.message ?? JSON.stringify(body);
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, code, message);
}

/** Thin typed client over the rating-service REST API. */
export class RatingServiceClient {
  constructor(private baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, init);
    if (!response.ok) {
      throw await parseError(response);
    }
    return (await response.json()) as T;
  }

  getExperiment(experimentId: string): Promise<ExperimentManifest> {
    return this.request(`/api/v1/experiments/${experimentId}`);
  }

  nextPair(experimentId: string, raterId: string): Promise<PairAssignment> {
    const query = new URLSearchParams({ rater_id: raterId });
    return this.request(`/api/v1/experiments/${experimentId}/next-pair?${query}`);
  }

  submitJudgement(
    experimentId: string,
    body: {
      pair_id: string;
      item_a: string;
      item_b: string;
      winner: string;
      rater_id: string;
      client_ts: number;
    },
  ): Promise<JudgementResponse> {
    return this.request(`/api/v1/experiments/${experimentId}/judgements`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getScores(experimentId: string): Promise<ScoreSnapshot> {
    return this.request(`/api/v1/experiments/${experimentId}/scores`);
  }
}
