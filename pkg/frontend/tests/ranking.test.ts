import { describe, expect, it } from "vitest";

import { ComparatorFailed, ConsoleApi } from "../src/api";
import { buildRankingView } from "../src/ranking";
import { renderRanking } from "../src/render";
import { mockServer } from "./mock";
import completedSession from "./fixtures/completed_session.json";
import failureFixture from "./fixtures/comparator_failure.json";

describe("ranking review", () => {
  it("renders three contained stages with per-candidate values from the payload", () => {
    const view = buildRankingView(completedSession as never);
    expect(view.available).toBe(true);
    expect(view.stages.map((s) => s.rows.length)).toEqual([29, 20, 3]);

    const rank = completedSession.state.rank!;
    for (const stage of view.stages) {
      for (const row of stage.rows) {
        expect(row.chargeValue).toBe(rank.charge_values[row.formula]);
        expect(row.complexity).toBe(rank.complexity_values[row.formula]);
      }
    }
    // containment highlighting: stage-A rows that survive stage B are marked
    const stageA = view.stages[0];
    expect(stageA.rows.filter((r) => r.survivesNextStage).length).toBe(20);
  });

  it("exposes every pairwise verdict with its raw response text", () => {
    const view = buildRankingView(completedSession as never);
    expect(view.traces.length).toBeGreaterThan(0);
    const html = renderRanking(view);
    for (const trace of view.traces.slice(0, 3)) {
      expect(html).toContain(trace.winner);
      expect(html).toContain("<pre>");
    }
  });

  it("shows empty-state guidance before rank has run", () => {
    const unranked = {
      ...completedSession,
      state: { ...completedSession.state, rank: null, comparison_log: [] },
    };
    const view = buildRankingView(unranked as never);
    expect(view.available).toBe(false);
    expect(renderRanking(view)).toContain("Run dedup and rank");
  });

  it("surfaces a failed comparison pair for operator decision", () => {
    const session = failureFixture.session;
    const view = buildRankingView(session as never);
    expect(view.failedPair).toEqual(session.state.failed_comparison);
    const html = renderRanking(view);
    expect(html).toContain("failed-pair");
    expect(html).toContain(session.state.failed_comparison![0]);
    expect(html).toContain(session.state.failed_comparison![1]);
    expect(html).toContain("operator decision required");
  });

  it("rank endpoint failure carries the pair to the caller", async () => {
    const server = mockServer({
      [`POST /sessions/${failureFixture.session.id}/rank`]: {
        status: 409,
        body: { detail: failureFixture.rank_error.detail },
      },
    });
    const api = new ConsoleApi("", server.fetch);
    let caught: unknown;
    try {
      await api.rank(failureFixture.session.id);
    } catch (error) {
      caught = error;
    }
    expect(caught).toBeInstanceOf(ComparatorFailed);
    expect((caught as ComparatorFailed).pair).toEqual(
      failureFixture.rank_error.detail.pair,
    );
  });
});
