// @vitest-environment jsdom
import { describe, expect, it } from "vitest";

import { StudyClient } from "../src/api";
import { SpotDraft, clampRelative, lensPlacement } from "../src/spot";
import type { AnswerBody, SpotQuestion } from "../src/types";
import { renderSpotView } from "../src/views";

describe("lens geometry", () => {
  it("clamps pointer coordinates into the image box", () => {
    expect(clampRelative(-0.2, 0.5)).toEqual({ rx: 0, ry: 0.5 });
    expect(clampRelative(0.3, 1.7)).toEqual({ rx: 0.3, ry: 1 });
  });

  it("centers the lens on the pointer away from edges", () => {
    const p = lensPlacement(0.5, 0.5, 0.2, 2);
    expect(p.left).toBeCloseTo(0.4, 12);
    expect(p.top).toBeCloseTo(0.4, 12);
  });

  it("pins the lens inside the image at the edges", () => {
    expect(lensPlacement(0, 0, 0.2, 2).left).toBe(0);
    expect(lensPlacement(1, 1, 0.2, 2).left).toBeCloseTo(0.8, 12);
    expect(lensPlacement(1, 1, 0.2, 2).top).toBeCloseTo(0.8, 12);
  });

  it("keeps the magnified point under the lens center", () => {
    for (const [rx, ry] of [[0.5, 0.5], [0.05, 0.9], [1, 0], [0.33, 0.66]]) {
      const p = lensPlacement(rx, ry, 0.25, 2.5);
      // the backdrop pixel shown at the lens center is the pointed pixel
      expect(rx * 2.5 - p.backdropX).toBeCloseTo(p.left + 0.125, 12);
      expect(ry * 2.5 - p.backdropY).toBeCloseTo(p.top + 0.125, 12);
    }
  });
});

describe("SpotDraft", () => {
  it("blocks submission until a choice is made, then posts exactly one slot", () => {
    const d = new SpotDraft();
    expect(d.isComplete()).toBe(false);
    expect(() => d.toBody("q")).toThrow(/no image chosen/);
    d.choose(1);
    d.choose(0); // changing your mind re-picks, never accumulates
    expect(d.toBody("q")).toEqual({ question_id: "q", chosen_slot: 0 });
  });

  it("rejects slots outside the pair", () => {
    expect(() => new SpotDraft().choose(2)).toThrow(/out of range/);
  });
});

const QUESTION: SpotQuestion = {
  done: false,
  cursor: 0,
  n_questions: 1,
  question_id: "q1",
  test_kind: "spot",
  images: ["/v1/images/x", "/v1/images/y"],
};

describe("spot view", () => {
  it("moves both lenses to identical relative coordinates", () => {
    const container = document.createElement("div");
    const view = renderSpotView(
      container,
      new StudyClient("http://service"),
      QUESTION,
      async () => {},
    );
    view.moveLens(0.5, 0.25);
    const [a, b] = view.panes.map((p) => p.lens);
    expect(a.hidden).toBe(false);
    expect(b.hidden).toBe(false);
    expect(a.style.left).toBe(b.style.left);
    expect(a.style.top).toBe(b.style.top);
    expect(a.style.backgroundPosition).toBe(b.style.backgroundPosition);
    // the two lenses magnify their own image, not a shared one
    expect(a.style.backgroundImage).toContain("/v1/images/x");
    expect(b.style.backgroundImage).toContain("/v1/images/y");
  });

  it("submits exactly one chosen slot", async () => {
    const container = document.createElement("div");
    const sent: AnswerBody[] = [];
    const view = renderSpotView(
      container,
      new StudyClient("http://service"),
      QUESTION,
      async (body) => {
        sent.push(body);
      },
    );
    expect(view.button.disabled).toBe(true);
    view.panes[1].pick.click();
    expect(view.button.disabled).toBe(false);
    view.button.click();
    await Promise.resolve();
    expect(sent).toEqual([{ question_id: "q1", chosen_slot: 1 }]);
  });
});
