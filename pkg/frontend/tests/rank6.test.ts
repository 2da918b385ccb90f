// @vitest-environment jsdom
import { describe, expect, it } from "vitest";

import { StudyClient } from "../src/api";
import { RankDraft } from "../src/rank6";
import type { AnswerBody, RankQuestion } from "../src/types";
import { renderRankView } from "../src/views";

describe("RankDraft", () => {
  it("starts with everything unranked and submission blocked", () => {
    const d = new RankDraft();
    expect(d.unrankedSlots).toEqual([0, 1, 2, 3, 4, 5]);
    expect(d.isComplete()).toBe(false);
    expect(() => d.toRanks()).toThrow(/permutation/);
  });

  it("stays incomplete until all six slots are placed", () => {
    const d = new RankDraft();
    for (const slot of [3, 1, 4]) d.place(slot, d.orderedSlots.length);
    expect(d.isComplete()).toBe(false);
    for (const slot of [0, 2, 5]) d.place(slot, d.orderedSlots.length);
    expect(d.isComplete()).toBe(true);
  });

  it("turns strip order into per-slot ranks", () => {
    const d = new RankDraft();
    // best to worst: slots 2, 0, 5, 1, 4, 3
    for (const slot of [2, 0, 5, 1, 4, 3]) d.place(slot, d.orderedSlots.length);
    expect(d.toRanks()).toEqual([2, 4, 1, 6, 5, 3]);
  });

  it("always produces a permutation of 1..6", () => {
    for (let trial = 0; trial < 50; trial++) {
      const d = new RankDraft();
      const slots = [0, 1, 2, 3, 4, 5].sort(() => Math.random() - 0.5);
      for (const s of slots) {
        d.place(s, Math.floor(Math.random() * (d.orderedSlots.length + 1)));
      }
      // shuffle a little more via move/remove/place
      d.move(slots[0], 3);
      d.remove(slots[1]);
      expect(d.isComplete()).toBe(false);
      d.place(slots[1], 0);
      const ranks = d.toRanks();
      expect([...ranks].sort((a, b) => a - b)).toEqual([1, 2, 3, 4, 5, 6]);
    }
  });

  it("rejects placing a slot that is not in the tray", () => {
    const d = new RankDraft();
    d.place(0, 0);
    expect(() => d.place(0, 1)).toThrow(/not in the tray/);
  });
});

const QUESTION: RankQuestion = {
  done: false,
  cursor: 0,
  n_questions: 1,
  question_id: "q0",
  test_kind: "rank6",
  reference_url: "/v1/images/ref",
  candidates: ["/v1/images/a", "/v1/images/b", "/v1/images/c",
               "/v1/images/d", "/v1/images/e", "/v1/images/f"],
};

function dragToStrip(view: ReturnType<typeof renderRankView>, slot: number) {
  view.thumbs[slot].dispatchEvent(new Event("dragstart", { bubbles: true }));
  view.strip.dispatchEvent(new Event("drop", { bubbles: true }));
}

describe("rank view", () => {
  it("keeps submit disabled until the strip holds a full permutation", async () => {
    const container = document.createElement("div");
    const sent: AnswerBody[] = [];
    const view = renderRankView(
      container,
      new StudyClient("http://service"),
      QUESTION,
      async (body) => {
        sent.push(body);
      },
    );
    expect(view.button.disabled).toBe(true);
    view.button.click();
    expect(sent).toHaveLength(0);

    for (const slot of [5, 4, 3, 2, 1]) {
      dragToStrip(view, slot);
      expect(view.button.disabled).toBe(true);
    }
    dragToStrip(view, 0);
    expect(view.button.disabled).toBe(false);

    view.button.click();
    await Promise.resolve();
    expect(sent).toEqual([
      { question_id: "q0", ranks: [6, 5, 4, 3, 2, 1] },
    ]);
  });

  it("opens the clicked candidate full-size next to the reference", () => {
    const container = document.createElement("div");
    const view = renderRankView(
      container,
      new StudyClient("http://service"),
      QUESTION,
      async () => {},
    );
    expect(view.viewer.hidden).toBe(true);
    view.thumbs[2].click();
    expect(view.viewer.hidden).toBe(false);
    const panes = view.viewer.querySelectorAll("img");
    expect(panes).toHaveLength(2);
    expect(panes[0].src).toContain("/v1/images/ref");
    expect(panes[1].src).toContain("/v1/images/c");
  });

  it("shows the server rejection inline and re-enables submit", async () => {
    const container = document.createElement("div");
    const view = renderRankView(
      container,
      new StudyClient("http://service"),
      QUESTION,
      async () => {
        throw new Error("HTTP 400: ranking must cover labels");
      },
    );
    for (const slot of [0, 1, 2, 3, 4, 5]) dragToStrip(view, slot);
    view.button.click();
    await Promise.resolve();
    await Promise.resolve();
    expect(view.error.hidden).toBe(false);
    expect(view.error.textContent).toContain("ranking must cover");
    expect(view.button.disabled).toBe(false);
  });
});
