import type { AnswerBody } from "./types";

// Geometry for the synchronized magnifier: the lens sits at the same
// relative position on both images, so the grader always compares the same
// tissue patch. All math is in fractions of the image box; the DOM layer
// multiplies by pixel sizes.

export type LensPlacement = {
  // top-left corner of the lens box, as a fraction of the image size
  left: number;
  top: number;
  // offset of the zoomed backdrop inside the lens, in image-size fractions
  backdropX: number;
  backdropY: number;
};

export function clampRelative(x: number, y: number): { rx: number; ry: number } {
  return {
    rx: Math.max(0, Math.min(1, x)),
    ry: Math.max(0, Math.min(1, y)),
  };
}

// rx/ry: pointer position as a fraction of the image box. lensFrac: lens
// diameter as a fraction of image width/height. zoom: magnification.
export function lensPlacement(
  rx: number,
  ry: number,
  lensFrac: number,
  zoom: number,
): LensPlacement {
  const half = lensFrac / 2;
  const left = Math.max(0, Math.min(rx - half, 1 - lensFrac));
  const top = Math.max(0, Math.min(ry - half, 1 - lensFrac));
  // keep the magnified point under the pointer: backdrop is the image
  // scaled by `zoom`, shifted so (rx, ry) lands at the lens center
  return {
    left,
    top,
    backdropX: rx * zoom - (left + half),
    backdropY: ry * zoom - (top + half),
  };
}

export class SpotDraft {
  private chosen: number | null = null;

  choose(slot: number): void {
    if (slot !== 0 && slot !== 1) throw new Error(`slot ${slot} out of range`);
    this.chosen = slot;
  }

  get chosenSlot(): number | null {
    return this.chosen;
  }

  isComplete(): boolean {
    return this.chosen !== null;
  }

  toBody(questionId: string): AnswerBody {
    if (this.chosen === null) throw new Error("no image chosen");
    return { question_id: questionId, chosen_slot: this.chosen };
  }
}
