import type { AnatomyAnswer, AnswerBody, StructurePrompt } from "./types";

// Draft for the structure-visibility form: one Yes / No / Not-present choice
// per structure the server asked about, with an optional free-text note.
// The note field is only surfaced after a "No", matching the questionnaire's
// "please explain why not" flow, but any text already typed is kept if the
// grader flips their answer back.

export class AnatomyDraft {
  private answers = new Map<string, AnatomyAnswer["answer"]>();
  private comments = new Map<string, string>();

  constructor(readonly structures: StructurePrompt[]) {}

  setAnswer(structureId: string, answer: string): void {
    const known = this.structures.find((s) => s.structure_id === structureId);
    if (!known) throw new Error(`unknown structure ${structureId}`);
    if (!known.answers.includes(answer)) {
      throw new Error(`answer ${answer} not offered for ${structureId}`);
    }
    this.answers.set(structureId, answer as AnatomyAnswer["answer"]);
  }

  setComment(structureId: string, text: string): void {
    this.comments.set(structureId, text);
  }

  answerFor(structureId: string): string | undefined {
    return this.answers.get(structureId);
  }

  commentVisible(structureId: string): boolean {
    return this.answers.get(structureId) === "No";
  }

  isComplete(): boolean {
    return this.structures.every((s) => this.answers.has(s.structure_id));
  }

  toBody(questionId: string): AnswerBody {
    if (!this.isComplete()) {
      throw new Error("every structure needs an answer before submitting");
    }
    const answers = this.structures.map((s) => {
      const entry: AnatomyAnswer = {
        structure_id: s.structure_id,
        answer: this.answers.get(s.structure_id)!,
      };
      const note = this.comments.get(s.structure_id)?.trim();
      if (note && this.commentVisible(s.structure_id)) entry.comment = note;
      return entry;
    });
    return { question_id: questionId, answers };
  }
}
