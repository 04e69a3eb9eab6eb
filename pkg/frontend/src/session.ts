// Session view model. Counters and table cells are copied verbatim from API
// payloads; the only work done here is picking fields and ordering rows.

import type { CandidateRow, FunnelCounts, SessionPayload } from "./types";

export interface FunnelStage {
  key: keyof FunnelCounts;
  label: string;
  count: number | null;
}

export interface SessionView {
  id: string;
  phase: string;
  seed: string | null;
  tree: number;
  cycle: number;
  roundsUsed: number;
  funnel: FunnelStage[];
  candidates: CandidateRow[];
  overrideActive: boolean;
  failedComparison: [string, string] | null;
}

const FUNNEL_ORDER: Array<[keyof FunnelCounts, string]> = [
  ["generated", "generated"],
  ["valid", "valid"],
  ["unique", "unique"],
  ["charge_ranked", "charge-ranked"],
  ["complexity_filtered", "complexity-filtered"],
  ["top", "top"],
];

export function buildSessionView(
  session: SessionPayload,
  candidates: CandidateRow[],
): SessionView {
  return {
    id: session.id,
    phase: session.phase,
    seed: session.state.seed,
    tree: session.state.cursor.tree + 1,
    cycle: session.state.cursor.cycle + 1,
    roundsUsed: session.state.cursor.rounds_used,
    funnel: FUNNEL_ORDER.map(([key, label]) => ({
      key,
      label,
      count: session.funnel[key],
    })),
    candidates: [...candidates].sort((a, b) => a.index - b.index),
    overrideActive: session.state.pending_override !== null,
    failedComparison: session.state.failed_comparison,
  };
}
