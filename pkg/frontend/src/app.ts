import { ApiError, StudyClient } from "./api";
import type { AnswerBody, Question, SessionInfo } from "./types";

// Session flow. The client holds no progress state of its own: the session
// id lives in the URL hash and everything else is re-fetched, so a refresh
// lands on whatever question the server says is current.

export type FlowState =
  | { phase: "question"; question: Question }
  | { phase: "done"; answered: number };

export class SessionFlow {
  constructor(
    private client: StudyClient,
    readonly sessionId: string,
  ) {}

  static async start(
    client: StudyClient,
    graderId: string,
    yearsExperience: number,
  ): Promise<SessionFlow> {
    const info: SessionInfo = await client.createSession(graderId, yearsExperience);
    return new SessionFlow(client, info.session_id);
  }

  async current(): Promise<FlowState> {
    const q = await this.client.currentQuestion(this.sessionId);
    if (q.done) return { phase: "done", answered: q.cursor };
    return { phase: "question", question: q };
  }

  // Submits and returns the next state. A 409 means the server is already
  // past this question (double-click, second tab); recover by re-syncing
  // instead of surfacing an error the grader cannot act on.
  async submit(body: AnswerBody): Promise<FlowState> {
    try {
      await this.client.submitAnswer(this.sessionId, body);
    } catch (err) {
      if (!(err instanceof ApiError) || err.status !== 409) throw err;
    }
    return this.current();
  }
}

export function sessionIdFromHash(hash: string): string | null {
  const m = /^#session=([0-9a-f]+)$/.exec(hash);
  return m ? m[1] : null;
}

export function hashForSession(sessionId: string): string {
  return `#session=${sessionId}`;
}
