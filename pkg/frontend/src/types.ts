// Payload shapes of the engine's HTTP API (api_version 1).
// The console treats every number here as opaque display data: it never
// recomputes capacities, charges, distances, or counts on its own.

export interface FunnelCounts {
  generated: number;
  valid: number;
  unique: number | null;
  charge_ranked: number | null;
  complexity_filtered: number | null;
  top: number | null;
}

export interface SessionCursor {
  tree: number;
  cycle: number;
  parent_index: number;
  rounds_used: number;
}

export interface ComparisonEntry {
  a: string;
  b: string;
  winner: string;
  response: string;
  cached: boolean;
}

export interface RankPayload {
  charge_ranked: string[];
  complexity_filtered: string[];
  voltage_ordered: string[];
  charge_values: Record<string, number>;
  complexity_values: Record<string, number>;
  excluded_unknown_valence: string[];
  complexity_excluded: string[];
}

export interface PendingOverride {
  override_id: number;
  template_id: string;
  body: string;
}

export interface SessionStatePayload {
  seed: string | null;
  phase: string;
  cursor: SessionCursor;
  comparison_log: ComparisonEntry[];
  rank: RankPayload | null;
  failed_comparison: [string, string] | null;
  pending_override: PendingOverride | null;
  flags: Record<string, string | null>;
}

export interface SessionPayload {
  api_version: string;
  id: string;
  phase: string;
  funnel: FunnelCounts;
  event_count: number;
  state: SessionStatePayload;
}

export interface SessionListing {
  id: string;
  phase: string;
  funnel: FunnelCounts;
  event_count: number;
}

export interface CandidateRow {
  index: number;
  formula: string;
  status: string;
  parent: string;
  tree: number;
  cycle: number;
  round: number;
  capacity: number;
  retrieved_hint: string | null;
  reasoning_text: string;
  flag: string | null;
}

export interface EventRecord {
  seq: number;
  ts: number;
  type: string;
  payload: Record<string, unknown>;
}

export interface EventBatch {
  api_version: string;
  events: EventRecord[];
  cursor: number;
}
