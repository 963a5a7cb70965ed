// Browser wiring: one session per tab, requests serialized per session.

import { ChatClient, type Mode } from './api.js';
import {
  applyBotTurn,
  applyError,
  applyUserTurn,
  initialState,
  lastDebug,
  rehydrate,
  startSession,
  type ConsoleState,
} from './state.js';
import { renderCandidates, renderError, renderTrace, renderTranscript } from './render.js';

const client = new ChatClient('');
let state: ConsoleState = initialState();
let busy = false;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function paint() {
  el('transcript').innerHTML = renderTranscript(state.transcript);
  el('error').innerHTML = renderError(state.error);
  const debug = lastDebug(state);
  if (debug?.candidates) {
    el('debug').innerHTML = renderCandidates(debug.candidates);
  } else if (debug?.trace) {
    el('debug').innerHTML = renderTrace(debug.trace);
  } else {
    el('debug').innerHTML = '';
  }
  el('session-label').textContent = state.sessionId
    ? `${state.mode} · ${state.sessionId}`
    : 'no session';
  const transcriptBox = el('transcript');
  transcriptBox.scrollTop = transcriptBox.scrollHeight;
}

async function newSession() {
  const mode = (el<HTMLSelectElement>('mode').value || 'open') as Mode;
  const knowledgeRaw = el<HTMLTextAreaElement>('knowledge').value.trim();
  const knowledge = knowledgeRaw ? knowledgeRaw.split('\n').map((l) => l.trim()).filter(Boolean) : [];
  try {
    const res = await client.createSession(mode, mode === 'knowledge' ? { knowledge } : {});
    state = startSession(state, mode, res.session_id);
    window.location.hash = res.session_id;
  } catch (err) {
    state = applyError(state, String(err));
  }
  paint();
}

async function sendTurn() {
  const input = el<HTMLInputElement>('message');
  const text = input.value.trim();
  const sessionId = state.sessionId;
  if (!text || busy || !sessionId) return;
  busy = true;
  input.value = '';
  state = applyUserTurn(state, text);
  paint();
  try {
    const res = await client.sendMessage(sessionId, text);
    state = applyBotTurn(state, res.reply, { candidates: res.candidates, trace: res.trace });
  } catch (err) {
    state = applyError(state, String(err));
  }
  busy = false;
  paint();
}

async function rehydrateFromHash() {
  const sid = window.location.hash.slice(1);
  if (!sid) return;
  try {
    const info = await client.getSession(sid);
    state = rehydrate(state, info.mode, info.session_id, info.history);
    el<HTMLSelectElement>('mode').value = info.mode;
  } catch {
    window.location.hash = '';
  }
  paint();
}

el('new-session').addEventListener('click', () => void newSession());
el('send').addEventListener('click', () => void sendTurn());
el<HTMLInputElement>('message').addEventListener('keydown', (ev) => {
  if (ev.key === 'Enter') void sendTurn();
});

void client
  .health()
  .then((h) => {
    const select = el<HTMLSelectElement>('mode');
    select.innerHTML = h.modes.map((m) => `<option value="${m}">${m}</option>`).join('');
  })
  .then(rehydrateFromHash)
  .catch((err) => {
    state = applyError(state, `service unreachable: ${err}`);
    paint();
  });
