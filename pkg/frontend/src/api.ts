import type {
  AnswerAck,
  AnswerBody,
  Question,
  SessionInfo,
  TestKind,
} from "./types";

export class ApiError extends Error {
  status: number;
  detail: string;

  constructor(status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.status = status;
    this.detail = detail;
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const res = await fetch(url, init);
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (typeof body?.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

export class StudyClient {
  readonly baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  createSession(graderId: string, yearsExperience: number): Promise<SessionInfo> {
    return request<SessionInfo>(`${this.baseUrl}/v1/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        grader_id: graderId,
        years_experience: yearsExperience,
      }),
    });
  }

  // The server owns the cursor: this always returns the question the session
  // is actually on, so a page refresh resumes exactly where it left off.
  currentQuestion(sessionId: string): Promise<Question> {
    return request<Question>(`${this.baseUrl}/v1/sessions/${sessionId}/question`);
  }

  submitAnswer(sessionId: string, body: AnswerBody): Promise<AnswerAck> {
    return request<AnswerAck>(`${this.baseUrl}/v1/sessions/${sessionId}/answers`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  results<T>(kind: TestKind): Promise<T> {
    return request<T>(`${this.baseUrl}/v1/results/${kind}`);
  }

  imageUrl(relative: string): string {
    return relative.startsWith("/") ? this.baseUrl + relative : relative;
  }
}
