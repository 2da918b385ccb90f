import { StudyClient } from "./api";
import { FlowState, SessionFlow, hashForSession, sessionIdFromHash } from "./app";
import type { AnatomyQuestion, RankQuestion, SpotQuestion } from "./types";
import { renderAnatomyView, renderRankView, renderSpotView } from "./views";

// Entry point for the static page. The service origin doubles as the page
// origin; point STUDY_BASE elsewhere when serving the bundle separately.

const STUDY_BASE = (window as { STUDY_BASE?: string }).STUDY_BASE ?? "";

async function run(root: HTMLElement) {
  const client = new StudyClient(STUDY_BASE);
  const existing = sessionIdFromHash(window.location.hash);
  const flow = existing
    ? new SessionFlow(client, existing)
    : await startFromForm(root, client);
  window.location.hash = hashForSession(flow.sessionId);

  let state = await flow.current();
  while (state.phase === "question") {
    const q = state.question;
    const submitted = new Promise<FlowState>((resolve, reject) => {
      const onSubmit = (body: Parameters<typeof flow.submit>[0]) =>
        flow.submit(body).then(resolve, reject);
      if (q.test_kind === "rank6") {
        renderRankView(root, client, q as RankQuestion, async (b) => {
          await onSubmit(b);
        });
      } else if (q.test_kind === "spot") {
        renderSpotView(root, client, q as SpotQuestion, async (b) => {
          await onSubmit(b);
        });
      } else {
        renderAnatomyView(root, client, q as AnatomyQuestion, async (b) => {
          await onSubmit(b);
        });
      }
    });
    state = await submitted;
  }
  root.textContent = "";
  const done = document.createElement("p");
  done.textContent = `All ${state.answered} questions answered. Thank you!`;
  root.append(done);
}

function startFromForm(
  root: HTMLElement,
  client: StudyClient,
): Promise<SessionFlow> {
  return new Promise((resolve) => {
    root.textContent = "";
    const name = document.createElement("input");
    name.placeholder = "Grader id";
    const years = document.createElement("input");
    years.type = "number";
    years.placeholder = "Years of experience";
    const go = document.createElement("button");
    go.textContent = "Start";
    go.addEventListener("click", async () => {
      if (!name.value || years.value === "") return;
      resolve(await SessionFlow.start(client, name.value, Number(years.value)));
    });
    root.append(name, years, go);
  });
}

const root = document.getElementById("app");
if (root) {
  run(root).catch((err) => {
    root.textContent = `Something went wrong: ${err}`;
  });
}
