import { ApiClient } from "./api";
import { ReviewController } from "./controller";
import { render } from "./view";

const annotatorId =
  new URLSearchParams(window.location.search).get("annotator") ?? "anonymous";

const api = new ApiClient("");
const controller = new ReviewController(api, annotatorId);
const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

controller.onChange((state) => render(root, state));

window.addEventListener("keydown", (event) => {
  if (event.metaKey || event.ctrlKey || event.altKey) return;
  void controller.handleKey(event.key);
});

window.addEventListener("online", () => void controller.retryQueued());

void controller.start().catch((error: unknown) => {
  root.textContent = `failed to load queue: ${String(error)}`;
});
