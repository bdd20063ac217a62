import { loadSchema, mappingsView, queryView, recordView, schemaView, el } from "./ui.js";

const TABS = [
  { name: "Schema", view: schemaView },
  { name: "Query", view: queryView },
  { name: "Mappings", view: mappingsView },
  { name: "Records", view: recordView },
] as const;

async function boot(): Promise<void> {
  const app = document.getElementById("app");
  if (!app) throw new Error("missing #app element");
  try {
    const schema = await loadSchema();
    const content = el("main", {});
    const nav = el("nav", {}, ...TABS.map((tab, index) => {
      const button = el("button", {}, tab.name);
      if (index === 0) button.classList.add("active");
      button.addEventListener("click", () => {
        nav.querySelectorAll("button").forEach((b) => b.classList.remove("active"));
        button.classList.add("active");
        content.replaceChildren(tab.view(schema));
      });
      return button;
    }));
    content.replaceChildren(TABS[0].view(schema));
    app.replaceChildren(nav, content);
  } catch (err) {
    app.replaceChildren(el("div", { class: "error" },
      `cannot reach the engine API: ${String(err)}`));
  }
}

void boot();
