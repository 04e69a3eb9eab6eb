// Ranking review model: the three funnel stages with the per-candidate
// numbers the API computed, every pairwise verdict with its raw reasoning
// text, and any escalated comparison failure.

import type { ComparisonEntry, SessionPayload } from "./types";

export interface StageRow {
  formula: string;
  chargeValue: number | null;
  complexity: number | null;
  survivesNextStage: boolean;
  topRank: number | null;
}

export interface RankingStage {
  title: string;
  rows: StageRow[];
}

export interface RankingView {
  available: boolean;
  emptyStateHint: string | null;
  stages: RankingStage[];
  traces: ComparisonEntry[];
  failedPair: [string, string] | null;
}

export function buildRankingView(session: SessionPayload): RankingView {
  const rank = session.state.rank;
  const failedPair = session.state.failed_comparison;
  if (!rank) {
    return {
      available: false,
      emptyStateHint: failedPair
        ? "Ranking stopped on a failed comparison; decide the pair below and rerun."
        : "Run dedup and rank to populate this screen.",
      stages: [],
      traces: session.state.comparison_log,
      failedPair,
    };
  }

  const nextStage = [new Set(rank.complexity_filtered), new Set(rank.voltage_ordered)];
  const topIndex = new Map(rank.voltage_ordered.map((f, i) => [f, i + 1]));

  const row = (formula: string, stage: number): StageRow => ({
    formula,
    chargeValue: rank.charge_values[formula] ?? null,
    complexity: rank.complexity_values[formula] ?? null,
    survivesNextStage: stage < 2 ? nextStage[stage].has(formula) : true,
    topRank: topIndex.get(formula) ?? null,
  });

  return {
    available: true,
    emptyStateHint: null,
    stages: [
      {
        title: "stage A: |total charge|",
        rows: rank.charge_ranked.map((f) => row(f, 0)),
      },
      {
        title: "stage B: preparation complexity",
        rows: rank.complexity_filtered.map((f) => row(f, 1)),
      },
      {
        title: "stage C: compared voltage",
        rows: rank.voltage_ordered.map((f) => row(f, 2)),
      },
    ],
    traces: session.state.comparison_log,
    failedPair,
  };
}
