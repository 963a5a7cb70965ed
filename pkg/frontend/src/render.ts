// HTML rendering as pure string builders: the smoke tests assert on the
// markup without needing a browser.

import type { CandidateRecord, TaskTrace, TranscriptEntry } from './api.js';

function esc(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function renderTranscript(entries: TranscriptEntry[]): string {
  return entries
    .map((e) => `<div class="turn ${e.speaker}"><span class="speaker">${e.speaker}</span>${esc(e.text)}</div>`)
    .join('\n');
}

export function renderCandidates(candidates: CandidateRecord[]): string {
  // Rows sorted by coherence, winner highlighted.
  const rows = [...candidates]
    .sort((a, b) => b.coherence - a.coherence)
    .map(
      (c) =>
        `<tr class="candidate${c.selected ? ' selected' : ''}" data-z="${c.z}">` +
        `<td>${c.z}</td><td>${esc(c.text)}</td>` +
        `<td>${c.coherence.toFixed(4)}</td>` +
        `<td>${c.forward.toFixed(3)}</td>` +
        `<td>${c.backward.toFixed(3)}</td></tr>`,
    )
    .join('\n');
  return (
    '<table class="candidates"><thead><tr>' +
    '<th>z</th><th>candidate</th><th>coherence</th><th>fwd</th><th>bwd</th>' +
    `</tr></thead><tbody>\n${rows}\n</tbody></table>`
  );
}

export function renderTrace(trace: TaskTrace): string {
  const badge = trace.phase2 ? '<span class="badge phase2">phase 2</span>' : '<span class="badge">single phase</span>';
  const fallback = trace.state_fallback ? '<span class="badge fallback">state fallback</span>' : '';
  return (
    `<div class="trace">${badge}${fallback}` +
    `<dl><dt>state</dt><dd>${esc(trace.state) || '&empty;'}</dd>` +
    `<dt>predicted action</dt><dd>${esc(trace.predicted_action) || '&mdash;'}</dd>` +
    `<dt>refreshed action</dt><dd>${esc(trace.refreshed_action) || '&mdash;'}</dd>` +
    `<dt>db results</dt><dd>${trace.db_results}</dd></dl></div>`
  );
}

export function renderError(message: string | null): string {
  return message ? `<div class="error">${esc(message)}</div>` : '';
}
