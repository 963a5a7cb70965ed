// Console state: transcript plus the per-turn debug panel payloads.
// Pure update functions so the test suite can drive them without a DOM.

import type { CandidateRecord, Mode, TaskTrace, TranscriptEntry } from './api.js';

export interface TurnDebug {
  turn: number; // index of the bot entry in the transcript
  candidates?: CandidateRecord[];
  trace?: TaskTrace;
}

export interface ConsoleState {
  sessionId: string | null;
  mode: Mode;
  transcript: TranscriptEntry[];
  debug: TurnDebug[];
  error: string | null;
}

export function initialState(mode: Mode = 'open'): ConsoleState {
  return { sessionId: null, mode, transcript: [], debug: [], error: null };
}

export function startSession(state: ConsoleState, mode: Mode, sessionId: string): ConsoleState {
  return { ...initialState(mode), sessionId };
}

export function applyUserTurn(state: ConsoleState, text: string): ConsoleState {
  return { ...state, transcript: [...state.transcript, { speaker: 'user', text }], error: null };
}

export function applyBotTurn(
  state: ConsoleState,
  reply: string,
  payload: { candidates?: CandidateRecord[]; trace?: TaskTrace },
): ConsoleState {
  const transcript: TranscriptEntry[] = [...state.transcript, { speaker: 'bot', text: reply }];
  const debug = [...state.debug];
  if (payload.candidates || payload.trace) {
    debug.push({ turn: transcript.length - 1, candidates: payload.candidates, trace: payload.trace });
  }
  return { ...state, transcript, debug };
}

export function applyError(state: ConsoleState, message: string): ConsoleState {
  // Errors surface inline; the transcript is never dropped.
  return { ...state, error: message };
}

export function rehydrate(state: ConsoleState, mode: Mode, sessionId: string, history: TranscriptEntry[]): ConsoleState {
  return { ...state, mode, sessionId, transcript: [...history], error: null };
}

export function lastDebug(state: ConsoleState): TurnDebug | null {
  return state.debug.length ? state.debug[state.debug.length - 1] : null;
}
