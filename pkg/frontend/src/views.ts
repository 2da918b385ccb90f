import { AnatomyDraft } from "./anatomy";
import type { StudyClient } from "./api";
import { RankDraft } from "./rank6";
import { SpotDraft, clampRelative, lensPlacement } from "./spot";
import type {
  AnatomyQuestion,
  AnswerBody,
  RankQuestion,
  SpotQuestion,
} from "./types";

export type SubmitHandler = (body: AnswerBody) => Promise<void>;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function submitBar(
  label: string,
  isReady: () => boolean,
  buildBody: () => AnswerBody,
  onSubmit: SubmitHandler,
) {
  const bar = el("div", "submit-bar");
  const button = el("button", "submit", label);
  button.disabled = true;
  const error = el("p", "error");
  error.hidden = true;
  bar.append(button, error);

  const refresh = () => {
    button.disabled = !isReady();
  };
  button.addEventListener("click", async () => {
    if (!isReady()) return;
    button.disabled = true; // one in-flight submission at a time
    error.hidden = true;
    try {
      await onSubmit(buildBody());
    } catch (err) {
      error.textContent = err instanceof Error ? err.message : String(err);
      error.hidden = false;
      refresh();
    }
  });
  return { bar, button, error, refresh };
}

// ---- six-way ranking ------------------------------------------------------

export function renderRankView(
  container: HTMLElement,
  client: StudyClient,
  question: RankQuestion,
  onSubmit: SubmitHandler,
) {
  const draft = new RankDraft(question.candidates.length);
  container.textContent = "";

  const tray = el("div", "tray");
  const strip = el("ol", "strip");
  const viewer = el("div", "viewer");
  viewer.hidden = true;

  const thumbs = question.candidates.map((url, slot) => {
    const img = el("img", "thumb");
    img.src = client.imageUrl(url);
    img.draggable = true;
    img.dataset.slot = String(slot);
    // click: full-resolution candidate next to the reference image
    img.addEventListener("click", () => {
      viewer.textContent = "";
      const ref = el("img", "pane-img");
      ref.src = client.imageUrl(question.reference_url);
      const cand = el("img", "pane-img");
      cand.src = client.imageUrl(url);
      viewer.append(ref, cand);
      viewer.hidden = false;
    });
    return img;
  });

  let dragged: number | null = null;
  const redraw = () => {
    tray.textContent = "";
    for (const slot of draft.unrankedSlots) tray.append(thumbs[slot]);
    strip.textContent = "";
    for (const slot of draft.orderedSlots) {
      const item = el("li", "ranked");
      item.append(thumbs[slot]);
      strip.append(item);
    }
    bar.refresh();
  };

  for (const img of thumbs) {
    img.addEventListener("dragstart", () => {
      dragged = Number(img.dataset.slot);
    });
  }
  strip.addEventListener("dragover", (e) => e.preventDefault());
  strip.addEventListener("drop", (e) => {
    e.preventDefault();
    if (dragged === null) return;
    const position = dropPosition(strip, e as DragEvent);
    if (draft.unrankedSlots.includes(dragged)) draft.place(dragged, position);
    else draft.move(dragged, position);
    dragged = null;
    redraw();
  });
  tray.addEventListener("dragover", (e) => e.preventDefault());
  tray.addEventListener("drop", (e) => {
    e.preventDefault();
    if (dragged === null || !draft.orderedSlots.includes(dragged)) return;
    draft.remove(dragged);
    dragged = null;
    redraw();
  });

  const bar = submitBar(
    "Submit ranking",
    () => draft.isComplete(),
    () => draft.toBody(question.question_id),
    onSubmit,
  );

  container.append(
    el("h2", "", "Order from best (left) to worst (right)"),
    strip,
    el("p", "hint", "Unranked:"),
    tray,
    viewer,
    bar.bar,
  );
  redraw();
  return { draft, strip, tray, viewer, thumbs, ...bar, redraw };
}

function dropPosition(strip: HTMLElement, e: DragEvent): number {
  const items = Array.from(strip.children);
  for (let i = 0; i < items.length; i++) {
    const box = items[i].getBoundingClientRect();
    if (e.clientX < box.left + box.width / 2) return i;
  }
  return items.length;
}

// ---- real-vs-generated spotting --------------------------------------------

const LENS_FRAC = 0.25;
const LENS_ZOOM = 2.5;

export function renderSpotView(
  container: HTMLElement,
  client: StudyClient,
  question: SpotQuestion,
  onSubmit: SubmitHandler,
) {
  const draft = new SpotDraft();
  container.textContent = "";
  const row = el("div", "spot-row");

  const panes = question.images.map((url, slot) => {
    const pane = el("div", "pane");
    const img = el("img", "pane-img");
    img.src = client.imageUrl(url);
    const lens = el("div", "lens");
    lens.hidden = true;
    lens.style.position = "absolute";
    lens.style.backgroundImage = `url(${client.imageUrl(url)})`;
    lens.style.backgroundRepeat = "no-repeat";
    const pick = el("button", "pick", "This one is the real acquisition");
    pick.addEventListener("click", () => {
      draft.choose(slot);
      panes.forEach((p, k) => p.pick.classList.toggle("chosen", k === slot));
      bar.refresh();
    });
    pane.append(img, lens, pick);
    row.append(pane);
    return { pane, img, lens, pick };
  });

  // one pointer drives both lenses: identical relative coordinates
  const moveLens = (rx: number, ry: number) => {
    for (const { img, lens } of panes) {
      const w = img.clientWidth || 1;
      const h = img.clientHeight || 1;
      const place = lensPlacement(rx, ry, LENS_FRAC, LENS_ZOOM);
      lens.hidden = false;
      lens.style.width = `${LENS_FRAC * w}px`;
      lens.style.height = `${LENS_FRAC * h}px`;
      lens.style.left = `${place.left * w}px`;
      lens.style.top = `${place.top * h}px`;
      lens.style.backgroundSize = `${LENS_ZOOM * w}px ${LENS_ZOOM * h}px`;
      lens.style.backgroundPosition =
        `${-place.backdropX * w}px ${-place.backdropY * h}px`;
    }
  };
  for (const { img } of panes) {
    img.addEventListener("pointermove", (e) => {
      const box = img.getBoundingClientRect();
      const { rx, ry } = clampRelative(
        (e.clientX - box.left) / (box.width || 1),
        (e.clientY - box.top) / (box.height || 1),
      );
      moveLens(rx, ry);
    });
    img.addEventListener("pointerleave", () => {
      for (const p of panes) p.lens.hidden = true;
    });
  }

  const bar = submitBar(
    "Submit choice",
    () => draft.isComplete(),
    () => draft.toBody(question.question_id),
    onSubmit,
  );
  container.append(
    el("h2", "", "Which image is the real acquisition?"),
    row,
    bar.bar,
  );
  return { draft, panes, moveLens, ...bar };
}

// ---- anatomy review ---------------------------------------------------------

export function renderAnatomyView(
  container: HTMLElement,
  client: StudyClient,
  question: AnatomyQuestion,
  onSubmit: SubmitHandler,
) {
  const draft = new AnatomyDraft(question.structures);
  container.textContent = "";

  // overlay comparison: generated image on top, width clipped by the slider
  const compare = el("div", "compare");
  compare.style.position = "relative";
  const under = el("img", "pane-img");
  under.src = client.imageUrl(question.reference_url);
  const overWrap = el("div", "over-wrap");
  overWrap.style.position = "absolute";
  overWrap.style.inset = "0";
  overWrap.style.overflow = "hidden";
  const over = el("img", "pane-img");
  over.src = client.imageUrl(question.evaluated_url);
  overWrap.append(over);
  compare.append(under, overWrap);

  const slider = el("input") as HTMLInputElement;
  slider.type = "range";
  slider.min = "0";
  slider.max = "100";
  slider.value = "50";
  const applySlider = () => {
    // 0: only the averaged reference; 100: only the model output
    overWrap.style.width = `${slider.value}%`;
  };
  slider.addEventListener("input", applySlider);
  applySlider();

  const form = el("div", "structures");
  const rows = question.structures.map((s) => {
    const row = el("fieldset", "structure");
    row.append(el("legend", "", s.prompt));
    const buttons = s.answers.map((answer) => {
      const b = el("button", "answer", answer);
      b.addEventListener("click", () => {
        draft.setAnswer(s.structure_id, answer);
        buttons.forEach((x) => x.classList.toggle("chosen", x === b));
        note.hidden = !draft.commentVisible(s.structure_id);
        bar.refresh();
      });
      return b;
    });
    const note = el("textarea", "note") as HTMLTextAreaElement;
    note.placeholder = "Optionally, explain why not";
    note.hidden = true;
    note.addEventListener("input", () => {
      draft.setComment(s.structure_id, note.value);
    });
    row.append(...buttons, note);
    form.append(row);
    return { row, buttons, note };
  });

  const bar = submitBar(
    "Submit review",
    () => draft.isComplete(),
    () => draft.toBody(question.question_id),
    onSubmit,
  );
  container.append(
    el("h2", "", "Structure visibility in the model output"),
    compare,
    slider,
    form,
    bar.bar,
  );
  return { draft, slider, overWrap, rows, applySlider, ...bar };
}
