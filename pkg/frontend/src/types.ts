// Wire types for the reader-study service /v1 API. Field names match the
// JSON the server sends; nothing here is invented client-side.

export type TestKind = "rank6" | "spot" | "anatomy";

export type SessionInfo = {
  session_id: string;
  test_kind: TestKind;
  n_questions: number;
  manifest_checksum: string;
  cursor: number;
};

export type QuestionBase = {
  done: boolean;
  cursor: number;
  n_questions: number;
  question_index?: number;
  question_id?: string;
  test_kind?: TestKind;
};

export type RankQuestion = QuestionBase & {
  question_id: string;
  test_kind: "rank6";
  reference_url: string;
  candidates: string[];
};

export type SpotQuestion = QuestionBase & {
  question_id: string;
  test_kind: "spot";
  images: string[];
};

export type StructurePrompt = {
  structure_id: string;
  prompt: string;
  group: string;
  answers: string[];
};

export type AnatomyQuestion = QuestionBase & {
  question_id: string;
  test_kind: "anatomy";
  reference_url: string;
  evaluated_url: string;
  structures: StructurePrompt[];
};

export type Question = RankQuestion | SpotQuestion | AnatomyQuestion;

export type AnswerAck = {
  accepted: boolean;
  cursor: number;
  n_questions: number;
};

export type AnatomyAnswer = {
  structure_id: string;
  answer: "Yes" | "No" | "NotPresent";
  comment?: string;
};

export type AnswerBody =
  | { question_id: string; ranks: number[] }
  | { question_id: string; chosen_slot: number }
  | { question_id: string; answers: AnatomyAnswer[] };

export type RankStat = { mean: number; ci_low: number; ci_high: number };

export type RankResults = {
  n_responses: number;
  mean_ranks: Record<string, RankStat>;
  reference: string;
  test: string;
  p_values: Record<string, number | null> | null;
  p_adjusted: Record<string, number | null> | null;
  significant: Record<string, boolean> | null;
  stratified: unknown;
};

export type SpotResults = {
  n_responses: number;
  n_incorrect: number;
  fool_rate: number;
  fool_rate_raw: number;
  stratified: unknown;
};

export type AnatomyResults = {
  n_responses: number;
  overall: { preservation: number; preservation_raw: number };
  per_structure: Record<
    string,
    { n_responses: number; preservation: number; preservation_raw: number }
  >;
};
