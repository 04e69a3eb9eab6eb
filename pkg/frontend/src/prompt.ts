// Prompt draft editing. A draft can be submitted only when every placeholder
// of the chosen template appears in the edited body, and the body introduces
// no placeholder the engine cannot bind. Content is never judged here.

export const TEMPLATE_PLACEHOLDERS: Record<string, string[]> = {
  initial_round_initial_cycle: ["material"],
  subsequent_round: ["existing_section", "invalid_section"],
  initial_round_subsequent_cycle: ["material", "allowed_groups"],
  voltage_compare: ["material_a", "material_b"],
};

const PLACEHOLDER = /\{([a-z_]+)\}/g;

export interface ChecklistItem {
  name: string;
  bound: boolean;
}

export interface PromptDraft {
  templateId: string;
  body: string;
  checklist: ChecklistItem[];
  unknown: string[];
  canSubmit: boolean;
}

export function placeholdersIn(body: string): string[] {
  const names = new Set<string>();
  for (const match of body.matchAll(PLACEHOLDER)) {
    names.add(match[1]);
  }
  return [...names];
}

export function buildDraft(templateId: string, body: string): PromptDraft {
  const required = TEMPLATE_PLACEHOLDERS[templateId] ?? [];
  const present = new Set(placeholdersIn(body));
  const checklist = required.map((name) => ({ name, bound: present.has(name) }));
  const unknown = [...present].filter((name) => !required.includes(name));
  const known = templateId in TEMPLATE_PLACEHOLDERS;
  return {
    templateId,
    body,
    checklist,
    unknown,
    canSubmit: known && unknown.length === 0 && checklist.every((item) => item.bound),
  };
}
