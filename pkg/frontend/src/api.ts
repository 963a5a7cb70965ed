// Typed client for the chat service. The console never computes scores or
// runs inference; everything it displays comes back in these payloads.

export type Mode = 'open' | 'knowledge' | 'task';

export interface CandidateRecord {
  z: number;
  text: string;
  coherence: number;
  forward: number;
  backward: number;
  selected: boolean;
}

export interface TaskTrace {
  state: string;
  predicted_action: string;
  refreshed_action: string;
  db_results: number;
  phase2: boolean;
  state_fallback: boolean;
}

export interface MessageResponse {
  v: number;
  reply: string;
  history_len: number;
  candidates?: CandidateRecord[];
  trace?: TaskTrace;
}

export interface TranscriptEntry {
  speaker: 'user' | 'bot';
  text: string;
}

export interface SessionInfo {
  v: number;
  session_id: string;
  mode: Mode;
  history: TranscriptEntry[];
}

export class ApiError extends Error {
  constructor(public status: number, message: string, public field?: string) {
    super(message);
  }
}

async function request<T>(base: string, method: string, path: string, body?: unknown): Promise<T> {
  const res = await fetch(base + path, {
    method,
    headers: { 'Content-Type': 'application/json' },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
  const data = await res.json();
  if (!res.ok) {
    throw new ApiError(res.status, data.error ?? `HTTP ${res.status}`, data.field);
  }
  return data as T;
}

export class ChatClient {
  constructor(private base: string = '') {}

  health(): Promise<{ v: number; status: string; modes: Mode[] }> {
    return request(this.base, 'GET', '/v1/health');
  }

  createSession(mode: Mode, opts: { knowledge?: string[]; goal?: unknown; seed?: number } = {}) {
    return request<{ v: number; session_id: string; mode: Mode }>(
      this.base, 'POST', '/v1/sessions', { mode, ...opts },
    );
  }

  sendMessage(sessionId: string, text: string): Promise<MessageResponse> {
    return request(this.base, 'POST', `/v1/sessions/${sessionId}/messages`, { text });
  }

  getSession(sessionId: string): Promise<SessionInfo> {
    return request(this.base, 'GET', `/v1/sessions/${sessionId}`);
  }

  closeSession(sessionId: string): Promise<{ v: number; closed: boolean }> {
    return request(this.base, 'DELETE', `/v1/sessions/${sessionId}`);
  }
}
