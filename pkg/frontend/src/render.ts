// HTML renderers. Pure string builders so the views are testable without a
// DOM; main.ts owns injecting them into the page.

import type { PromptDraft } from "./prompt";
import type { RankingView } from "./ranking";
import type { SessionView } from "./session";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderHeader(view: SessionView, stale: boolean): string {
  const badges = [
    `<span class="badge phase">${escapeHtml(view.phase)}</span>`,
    `<span class="badge">tree ${view.tree}</span>`,
    `<span class="badge">cycle ${view.cycle}</span>`,
    `<span class="badge">rounds used ${view.roundsUsed}</span>`,
  ];
  if (view.overrideActive) {
    badges.push(`<span class="badge override">override active</span>`);
  }
  if (stale) {
    badges.push(`<span class="badge stale">stale</span>`);
  }
  return `<header><h1>session ${escapeHtml(view.id)}</h1>` +
    `<p class="seed">${escapeHtml(view.seed ?? "")}</p>${badges.join(" ")}</header>`;
}

export function renderFunnel(view: SessionView): string {
  const cells = view.funnel.map(({ key, label, count }) => {
    const shown = count === null ? "–" : String(count);
    return (
      `<div class="stage"><span class="count" data-counter="${key}">${shown}</span>` +
      `<span class="label">${escapeHtml(label)}</span></div>`
    );
  });
  return `<section class="funnel">${cells.join("<span class='arrow'>→</span>")}</section>`;
}

export function renderCandidateTable(view: SessionView): string {
  const rows = view.candidates.map((c) => {
    const hint = c.retrieved_hint ? escapeHtml(c.retrieved_hint) : "";
    const flag = c.flag ? ` <span class="flag">${escapeHtml(c.flag)}</span>` : "";
    return (
      `<tr class="status-${escapeHtml(c.status)}" data-index="${c.index}">` +
      `<td>${c.index}</td><td>${escapeHtml(c.formula)}</td>` +
      `<td>${escapeHtml(c.status)}${flag}</td>` +
      `<td>${c.capacity.toFixed(2)}</td>` +
      `<td>${escapeHtml(c.parent)}</td><td>${hint}</td></tr>`
    );
  });
  return (
    `<table class="candidates"><thead><tr>` +
    `<th>#</th><th>formula</th><th>status</th><th>capacity</th><th>parent</th><th>hint</th>` +
    `</tr></thead><tbody>${rows.join("")}</tbody></table>`
  );
}

export function renderRanking(view: RankingView): string {
  const parts: string[] = [];
  if (view.failedPair) {
    parts.push(
      `<div class="failed-pair">comparison failed: ` +
      `<b>${escapeHtml(view.failedPair[0])}</b> vs <b>${escapeHtml(view.failedPair[1])}</b>` +
      ` — operator decision required</div>`,
    );
  }
  if (!view.available) {
    parts.push(`<p class="empty">${escapeHtml(view.emptyStateHint ?? "")}</p>`);
  } else {
    const columns = view.stages.map((stage) => {
      const rows = stage.rows.map((row) => {
        const charge = row.chargeValue === null ? "" : row.chargeValue.toExponential(2);
        const complexity = row.complexity === null ? "" : String(row.complexity);
        const classes = ["row"];
        if (row.survivesNextStage) classes.push("contained");
        const rank = row.topRank === null ? "" : `<b>#${row.topRank}</b> `;
        return (
          `<li class="${classes.join(" ")}">${rank}${escapeHtml(row.formula)}` +
          `<span class="values">${charge} ${complexity}</span></li>`
        );
      });
      return `<div class="column"><h3>${escapeHtml(stage.title)}</h3><ol>${rows.join("")}</ol></div>`;
    });
    parts.push(`<div class="columns">${columns.join("")}</div>`);
  }
  const traces = view.traces.map((entry) => (
    `<details class="trace"><summary>${escapeHtml(entry.a)} vs ${escapeHtml(entry.b)} → ` +
    `<b>${escapeHtml(entry.winner)}</b>${entry.cached ? " (cached)" : ""}</summary>` +
    `<pre>${escapeHtml(entry.response)}</pre></details>`
  ));
  parts.push(`<section class="traces">${traces.join("")}</section>`);
  return `<section class="ranking">${parts.join("")}</section>`;
}

export function renderPromptEditor(draft: PromptDraft): string {
  const checklist = draft.checklist.map((item) => (
    `<li class="${item.bound ? "bound" : "unbound"}">` +
    `${item.bound ? "☑" : "☐"} {${escapeHtml(item.name)}}</li>`
  ));
  const unknown = draft.unknown.map((name) => (
    `<li class="unknown">✗ {${escapeHtml(name)}} is not a known placeholder</li>`
  ));
  return (
    `<section class="prompt-editor">` +
    `<textarea class="body">${escapeHtml(draft.body)}</textarea>` +
    `<ul class="checklist">${checklist.join("")}${unknown.join("")}</ul>` +
    `<button class="submit-override" ${draft.canSubmit ? "" : "disabled"}>` +
    `submit override</button></section>`
  );
}
