// DOM wiring: everything testable lives in the sibling modules; this file
// only moves data between them, the API client, and the page.

import { ComparatorFailed, ConsoleApi, SessionGone } from "./api";
import { EventPoller } from "./poll";
import { buildDraft, TEMPLATE_PLACEHOLDERS } from "./prompt";
import { buildRankingView } from "./ranking";
import {
  renderCandidateTable,
  renderFunnel,
  renderHeader,
  renderPromptEditor,
  renderRanking,
} from "./render";
import { buildSessionView } from "./session";
import type { CandidateRow, SessionPayload } from "./types";

const api = new ConsoleApi("", (url, init) => window.fetch(url, init));

interface PageState {
  session: SessionPayload | null;
  candidates: CandidateRow[];
  stale: boolean;
  templateId: string;
  draftBody: string;
  notice: string | null;
}

const page: PageState = {
  session: null,
  candidates: [],
  stale: false,
  templateId: "initial_round_initial_cycle",
  draftBody: "",
  notice: null,
};

function sessionIdFromHash(): string | null {
  const id = window.location.hash.replace(/^#/, "");
  return id || null;
}

async function refresh(id: string): Promise<void> {
  page.session = await api.getSession(id);
  page.candidates = (await api.candidates(id)).candidates;
  render();
}

function render(): void {
  const root = document.getElementById("app");
  if (!root) return;
  if (!page.session) {
    root.innerHTML = `<p class="empty">Open a session as #&lt;session-id&gt; in the URL.</p>`;
    return;
  }
  const view = buildSessionView(page.session, page.candidates);
  const draft = buildDraft(page.templateId, page.draftBody);
  const notice = page.notice ? `<div class="notice">${page.notice}</div>` : "";
  root.innerHTML = [
    renderHeader(view, page.stale),
    notice,
    renderFunnel(view),
    `<div class="actions">
       <button data-action="round">run round</button>
       <button data-action="explore">explore</button>
       <button data-action="dedup">dedup</button>
       <button data-action="rank">rank</button>
     </div>`,
    `<select class="template-pick">${Object.keys(TEMPLATE_PLACEHOLDERS)
      .map((t) => `<option ${t === page.templateId ? "selected" : ""}>${t}</option>`)
      .join("")}</select>`,
    renderPromptEditor(draft),
    renderRanking(buildRankingView(page.session)),
    renderCandidateTable(view),
  ].join("\n");
  wire(root, view.id, draft.canSubmit);
}

function wire(root: HTMLElement, id: string, canSubmit: boolean): void {
  root.querySelectorAll<HTMLButtonElement>(".actions button").forEach((button) => {
    button.onclick = () => runAction(id, button.dataset.action ?? "");
  });
  const textarea = root.querySelector<HTMLTextAreaElement>(".prompt-editor .body");
  if (textarea) {
    textarea.oninput = () => {
      page.draftBody = textarea.value;
      render();
    };
  }
  const picker = root.querySelector<HTMLSelectElement>(".template-pick");
  if (picker) {
    picker.onchange = () => {
      page.templateId = picker.value;
      render();
    };
  }
  const submit = root.querySelector<HTMLButtonElement>(".submit-override");
  if (submit && canSubmit) {
    submit.onclick = async () => {
      await api.submitOverride(id, page.templateId, page.draftBody);
      page.notice = "override active for the next round";
      await refresh(id);
    };
  }
  root.querySelectorAll<HTMLTableRowElement>(".candidates tbody tr").forEach((row) => {
    row.ondblclick = async () => {
      const index = Number(row.dataset.index);
      await api.flagCandidate(id, index, "flagged");
      await refresh(id);
    };
  });
}

async function runAction(id: string, action: string): Promise<void> {
  try {
    page.notice = null;
    if (action === "round") await api.advanceRound(id);
    if (action === "explore") await api.explore(id);
    if (action === "dedup") await api.dedup(id);
    if (action === "rank") await api.rank(id);
  } catch (error) {
    if (error instanceof ComparatorFailed) {
      page.notice = `comparison failed: ${error.pair[0]} vs ${error.pair[1]}`;
    } else if (error instanceof SessionGone) {
      page.notice = "session is gone";
    } else {
      page.notice = String(error);
    }
  }
  await refresh(id);
}

async function start(): Promise<void> {
  const id = sessionIdFromHash();
  if (!id) {
    render();
    return;
  }
  await refresh(id);
  const poller = new EventPoller(api, id, {
    onEvents: () => void refresh(id),
    onStatus: (status) => {
      page.stale = status !== "live";
      render();
    },
  });
  void poller.run();
}

window.addEventListener("DOMContentLoaded", () => void start());
window.addEventListener("hashchange", () => window.location.reload());
