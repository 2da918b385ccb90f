import type { AnswerBody } from "./types";

// Draft state for the six-way ranking question. Thumbnails start in an
// unranked tray and are dragged into an ordered strip (position 0 = best).
// Submission stays disabled until every slot sits in the strip exactly once.

export class RankDraft {
  private ordered: number[] = [];
  private tray: number[];

  constructor(readonly slotCount = 6) {
    this.tray = Array.from({ length: slotCount }, (_, i) => i);
  }

  get orderedSlots(): readonly number[] {
    return this.ordered;
  }

  get unrankedSlots(): readonly number[] {
    return this.tray;
  }

  // Insert a tray thumbnail at `position` in the strip (clamped).
  place(slot: number, position: number): void {
    const at = this.tray.indexOf(slot);
    if (at < 0) throw new Error(`slot ${slot} is not in the tray`);
    this.tray.splice(at, 1);
    const pos = Math.max(0, Math.min(position, this.ordered.length));
    this.ordered.splice(pos, 0, slot);
  }

  // Reorder within the strip.
  move(slot: number, position: number): void {
    const at = this.ordered.indexOf(slot);
    if (at < 0) throw new Error(`slot ${slot} is not ranked yet`);
    this.ordered.splice(at, 1);
    const pos = Math.max(0, Math.min(position, this.ordered.length));
    this.ordered.splice(pos, 0, slot);
  }

  // Send a thumbnail back to the tray.
  remove(slot: number): void {
    const at = this.ordered.indexOf(slot);
    if (at < 0) throw new Error(`slot ${slot} is not ranked`);
    this.ordered.splice(at, 1);
    this.tray.push(slot);
    this.tray.sort((a, b) => a - b);
  }

  isComplete(): boolean {
    if (this.tray.length > 0 || this.ordered.length !== this.slotCount) {
      return false;
    }
    return new Set(this.ordered).size === this.slotCount;
  }

  // ranks[k] is the 1-based rank the grader gave display slot k.
  toRanks(): number[] {
    if (!this.isComplete()) {
      throw new Error("ranking is not a complete permutation");
    }
    const ranks = new Array<number>(this.slotCount);
    this.ordered.forEach((slot, position) => {
      ranks[slot] = position + 1;
    });
    return ranks;
  }

  toBody(questionId: string): AnswerBody {
    return { question_id: questionId, ranks: this.toRanks() };
  }
}
