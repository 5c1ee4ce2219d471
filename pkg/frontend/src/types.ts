export interface PairMedia {
  item_a: string;
  item_b: string;
  reference: string;
  overview: string;
}

export interface PairAssignment {
  pair_id: string;
  experiment_id: string;
  ref_group: string;
  item_a: string;
  item_b: string;
  media: PairMedia;
  issued_at: number;
  expires_at: number;
}

export interface JudgementResponse {
  seq: number;
  scores: Record<string, number>;
  warning?: string;
}

export interface ItemScore {
  score: number;
  n_judgements: number;
  mos: number;
  group_id: string;
}

export interface ScoreSnapshot {
  experiment_id: string;
  total_judgements: number;
  items: Record<string, ItemScore>;
}

export interface ExperimentManifest {
  experiment_id: string;
  name: string;
  items: { item_id: string; group_id: string; media_uri: string }[];
  total_judgements: number;
  unschedulable_groups: string[];
}

export type Side = "left" | "right" | "either";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}
