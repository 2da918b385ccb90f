// @vitest-environment jsdom
import { describe, expect, it } from "vitest";

import { AnatomyDraft } from "../src/anatomy";
import { StudyClient } from "../src/api";
import type { AnatomyQuestion, AnswerBody, StructurePrompt } from "../src/types";
import { renderAnatomyView } from "../src/views";

const STRUCTURES: StructurePrompt[] = [
  "posterior-vitreous-membrane",
  "bursa-praemacularis",
  "area-of-martegiani",
  "hyalocytes",
  "retinal-layers",
  "optic-nerve-head",
  "choroid",
  "choroidal-sclera-interface",
  "pathological-structures",
].map((id) => ({
  structure_id: id,
  prompt: `Is the ${id.replace(/-/g, " ")} visible in the generated image?`,
  group: "any",
  answers: ["Yes", "No", "NotPresent"],
}));

describe("AnatomyDraft", () => {
  it("requires an answer for every structure", () => {
    const d = new AnatomyDraft(STRUCTURES);
    for (const s of STRUCTURES.slice(0, 8)) d.setAnswer(s.structure_id, "Yes");
    expect(d.isComplete()).toBe(false);
    expect(() => d.toBody("q")).toThrow(/every structure/);
    d.setAnswer(STRUCTURES[8].structure_id, "NotPresent");
    expect(d.isComplete()).toBe(true);
    const body = d.toBody("q") as { answers: unknown[] };
    expect(body.answers).toHaveLength(9);
  });

  it("only reveals the note field after a No", () => {
    const d = new AnatomyDraft(STRUCTURES);
    const sid = STRUCTURES[0].structure_id;
    expect(d.commentVisible(sid)).toBe(false);
    d.setAnswer(sid, "Yes");
    expect(d.commentVisible(sid)).toBe(false);
    d.setAnswer(sid, "No");
    expect(d.commentVisible(sid)).toBe(true);
  });

  it("drops notes from answers that are no longer No", () => {
    const d = new AnatomyDraft(STRUCTURES);
    for (const s of STRUCTURES) d.setAnswer(s.structure_id, "Yes");
    const sid = STRUCTURES[2].structure_id;
    d.setAnswer(sid, "No");
    d.setComment(sid, "blurred out");
    d.setAnswer(sid, "Yes");
    const body = d.toBody("q") as {
      answers: { structure_id: string; comment?: string }[];
    };
    expect(body.answers.find((a) => a.structure_id === sid)?.comment)
      .toBeUndefined();
  });

  it("rejects answers the server did not offer", () => {
    const d = new AnatomyDraft(STRUCTURES);
    expect(() => d.setAnswer(STRUCTURES[0].structure_id, "Maybe"))
      .toThrow(/not offered/);
    expect(() => d.setAnswer("optic-chiasm", "Yes")).toThrow(/unknown/);
  });
});

const QUESTION: AnatomyQuestion = {
  done: false,
  cursor: 0,
  n_questions: 1,
  question_id: "q2",
  test_kind: "anatomy",
  reference_url: "/v1/images/ref",
  evaluated_url: "/v1/images/gen",
  structures: STRUCTURES,
};

describe("anatomy view", () => {
  it("enables submit only after all nine rows are answered", async () => {
    const container = document.createElement("div");
    const sent: AnswerBody[] = [];
    const view = renderAnatomyView(
      container,
      new StudyClient("http://service"),
      QUESTION,
      async (body) => {
        sent.push(body);
      },
    );
    expect(view.rows).toHaveLength(9);
    for (const row of view.rows.slice(0, 8)) row.buttons[0].click();
    expect(view.button.disabled).toBe(true);
    view.rows[8].buttons[0].click();
    expect(view.button.disabled).toBe(false);
    view.button.click();
    await Promise.resolve();
    const body = sent[0] as { answers: { answer: string }[] };
    expect(body.answers).toHaveLength(9);
    expect(body.answers.every((a) => a.answer === "Yes")).toBe(true);
  });

  it("reveals the note box on No and sends its text", async () => {
    const container = document.createElement("div");
    const sent: AnswerBody[] = [];
    const view = renderAnatomyView(
      container,
      new StudyClient("http://service"),
      QUESTION,
      async (body) => {
        sent.push(body);
      },
    );
    const row = view.rows[3];
    expect(row.note.hidden).toBe(true);
    row.buttons[1].click(); // "No"
    expect(row.note.hidden).toBe(false);
    row.note.value = "washed out by smoothing";
    row.note.dispatchEvent(new Event("input"));
    view.rows.forEach((r, i) => {
      if (i !== 3) r.buttons[2].click();
    });
    view.button.click();
    await Promise.resolve();
    const body = sent[0] as {
      answers: { structure_id: string; comment?: string }[];
    };
    expect(body.answers[3].comment).toBe("washed out by smoothing");
  });

  it("shows each image fully at the slider extremes", () => {
    const container = document.createElement("div");
    const view = renderAnatomyView(
      container,
      new StudyClient("http://service"),
      QUESTION,
      async () => {},
    );
    view.slider.value = "0";
    view.applySlider();
    expect(view.overWrap.style.width).toBe("0%"); // only the reference
    view.slider.value = "100";
    view.applySlider();
    expect(view.overWrap.style.width).toBe("100%"); // only the model output
  });
});
