/** DOM views: schema browser, query builder, mapping review, record tree.
 *
 * No framework; each view is a function returning a root element and
 * re-rendering itself in place on state changes. Schema metadata is
 * fetched once at boot and shared read-only.
 */

import {
  api,
  ApiError,
  ClassificationRecord,
  ConceptRecord,
  CvNode,
  CvtRecord,
  EventNode,
  MetRecord,
  QueryResult,
  UnitRecord,
  UnitsDoc,
} from "./api.js";
import {
  COMPARATORS,
  Comparator,
  Condition,
  ConditionRow,
  Connective,
  QueryDraft,
  Target,
  TARGETS,
  draftText,
} from "./dsl.js";

export interface SchemaCache {
  cvts: CvtRecord[];
  mets: MetRecord[];
  classifications: ClassificationRecord[];
  units: UnitsDoc;
  concepts: ConceptRecord[];
}

export async function loadSchema(): Promise<SchemaCache> {
  const [cvts, mets, classifications, units, concepts] = await Promise.all([
    api.cvts(), api.mets(), api.classifications(), api.units(), api.concepts(),
  ]);
  return { cvts, mets, classifications, units, concepts };
}

// --- small DOM helpers ------------------------------------------------------

type Child = Node | string;

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, attrs: Record<string, string> = {}, ...children: Child[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  node.append(...children);
  return node;
}

function select(options: { value: string; label?: string }[], current: string,
                onChange: (value: string) => void): HTMLSelectElement {
  const node = el("select");
  for (const opt of options) {
    const o = el("option", { value: opt.value }, opt.label ?? opt.value);
    if (opt.value === current) o.selected = true;
    node.append(o);
  }
  node.addEventListener("change", () => onChange(node.value));
  return node;
}

function table(headers: string[], rows: Child[][]): HTMLTableElement {
  const head = el("tr", {}, ...headers.map((h) => el("th", {}, h)));
  const body = rows.map((cells) => el("tr", {}, ...cells.map((c) => el("td", {}, c))));
  return el("table", {}, el("thead", {}, head), el("tbody", {}, ...body));
}

function errorBox(err: unknown): HTMLElement {
  const text = err instanceof ApiError ? `${err.code}: ${err.detail}` : String(err);
  return el("div", { class: "error" }, text);
}

const fmt = (x: number): string => String(Number(x.toPrecision(12)));

// --- schema browser ---------------------------------------------------------

export function schemaView(schema: SchemaCache): HTMLElement {
  const constraint = (c: CvtRecord) => c.dimension ?? c.classification ?? "";
  return el("section", {},
    el("h2", {}, "Variable types"),
    table(["id", "name", "category", "constraint"],
      schema.cvts.map((c) => [c.id, c.name, c.category, constraint(c)])),
    el("h2", {}, "Event types"),
    table(["id", "name", "members", "relationships"],
      schema.mets.map((m) => [m.id, m.name, m.members.join(", "),
        m.relationships.map((r) => `${r.from} -${r.name}-> ${r.to}`).join("; ")])),
    el("h2", {}, "Classifications"),
    table(["id", "name", "items"],
      schema.classifications.map((c) => [c.id, c.name, c.items.join(" | ")])),
    el("h2", {}, "Units"),
    table(["id", "name", "dimension", "factor", "offset"],
      schema.units.units.map((u) => [u.id, u.name, u.dimension, fmt(u.factor), fmt(u.offset)])),
    el("h2", {}, "Concepts"),
    table(["uri", "label", "type"],
      schema.concepts.map((c) => [c.uri, c.label, c.type])),
  );
}

// --- query builder ----------------------------------------------------------

const PREDICATES = ["is_a", "regional_part_of"];

function defaultCondition(schema: SchemaCache, kind: Condition["kind"]): Condition {
  switch (kind) {
    case "measurement": {
      const cvt = schema.cvts.find((c) => c.category === "Measurement");
      if (!cvt) throw new Error("no measurement CVT defined");
      const unit = schema.units.units.find((u) => u.dimension === cvt.dimension);
      return { kind, cvt: cvt.id, op: ">", value: 0, unit: unit ? unit.id : "" };
    }
    case "classification": {
      const cvt = schema.cvts.find((c) => c.category === "ObservationByClassification");
      if (!cvt) throw new Error("no classification CVT defined");
      const cls = schema.classifications.find((c) => c.id === cvt.classification);
      return { kind, cvt: cvt.id, item: cls?.items[0] ?? "" };
    }
    case "concept":
      if (schema.concepts.length === 0) throw new Error("no concepts imported");
      return { kind, root: schema.concepts[0]!.uri };
    case "event":
      if (schema.mets.length === 0) throw new Error("no MET defined");
      return { kind, met: schema.mets[0]!.id };
    case "time":
      return { kind, op: "<", instant: "2000-01-01T00:00:00Z" };
    case "purpose":
      return { kind, purpose: "baseline" };
  }
}

function conditionEditor(schema: SchemaCache, row: ConditionRow,
                         update: (c: Condition) => void): HTMLElement {
  const c = row.condition;
  const box = el("span", { class: "condition" });
  const opSelect = (op: Comparator, apply: (op: Comparator) => void) =>
    select(COMPARATORS.map((value) => ({ value })), op,
      (v) => apply(v as Comparator));

  if (c.kind === "measurement") {
    const cvts = schema.cvts.filter((x) => x.category === "Measurement");
    const units = schema.units.units.filter(
      (u) => u.dimension === schema.cvts.find((x) => x.id === c.cvt)?.dimension);
    const valueInput = el("input", { type: "number", step: "any", value: String(c.value) });
    valueInput.addEventListener("change", () =>
      update({ ...c, value: Number(valueInput.value) }));
    box.append(
      select(cvts.map((x) => ({ value: x.id, label: x.name })), c.cvt, (cvt) => {
        const dimension = schema.cvts.find((x) => x.id === cvt)?.dimension;
        const unit = schema.units.units.find((u) => u.dimension === dimension);
        update({ ...c, cvt, unit: unit ? unit.id : c.unit });
      }),
      opSelect(c.op, (op) => update({ ...c, op })),
      valueInput,
      select(units.map((u) => ({ value: u.id, label: u.name })), c.unit,
        (unit) => update({ ...c, unit })),
    );
  } else if (c.kind === "classification") {
    const cvts = schema.cvts.filter((x) => x.category === "ObservationByClassification");
    const cls = schema.classifications.find(
      (x) => x.id === schema.cvts.find((y) => y.id === c.cvt)?.classification);
    box.append(
      select(cvts.map((x) => ({ value: x.id, label: x.name })), c.cvt, (cvt) => {
        const next = schema.classifications.find(
          (x) => x.id === schema.cvts.find((y) => y.id === cvt)?.classification);
        update({ ...c, cvt, item: next?.items[0] ?? c.item });
      }),
      " IS ",
      select((cls?.items ?? [c.item]).map((value) => ({ value })), c.item,
        (item) => update({ ...c, item })),
    );
  } else if (c.kind === "concept") {
    const conceptCvts = schema.cvts.filter((x) => x.category === "MedicalConceptInstance");
    const anyCvt = "(any)";
    box.append(
      select([{ value: anyCvt }, ...conceptCvts.map((x) => ({ value: x.id, label: x.name }))],
        c.cvt ?? anyCvt,
        (cvt) => update({ ...c, cvt: cvt === anyCvt ? undefined : cvt })),
      " IN ",
      select(schema.concepts.map((x) => ({ value: x.uri, label: `${x.label} (${x.uri})` })),
        c.root, (root) => update({ ...c, root })),
      select([{ value: "", label: "exact" },
              ...PREDICATES.map((value) => ({ value, label: `expand ${value}` }))],
        c.predicate ?? "",
        (predicate) => update({ ...c, predicate: predicate || undefined })),
    );
    if (c.predicate !== undefined) {
      box.append(select([{ value: "forward" }, { value: "inverse" }],
        c.direction ?? "forward",
        (direction) => update({ ...c, direction: direction as "forward" | "inverse" })));
    }
  } else if (c.kind === "event") {
    box.append("event IS ",
      select(schema.mets.map((m) => ({ value: m.id, label: m.name })), c.met,
        (met) => update({ ...c, met })));
  } else if (c.kind === "time") {
    const instant = el("input", { type: "text", value: c.instant, size: "22" });
    instant.addEventListener("change", () => update({ ...c, instant: instant.value }));
    box.append("time ", opSelect(c.op, (op) => update({ ...c, op })), instant);
  } else {
    const purpose = el("input", { type: "text", value: c.purpose, size: "12" });
    purpose.addEventListener("change", () => update({ ...c, purpose: purpose.value }));
    box.append("purpose IS ", purpose);
  }
  return box;
}

function resultsTable(result: QueryResult): HTMLElement {
  return el("div", {},
    el("p", {}, `${result.count} ${result.target} matched`),
    table(["id", "matched"],
      result.rows.map((row) => [row.id,
        row.matched.map((m) => `${m.cvt}=${m.display}`).join("; ")])));
}

export function queryView(schema: SchemaCache): HTMLElement {
  const draft: QueryDraft = {
    target: "patients",
    connective: "AND",
    rows: [],
  };
  const root = el("section", {});
  let output: HTMLElement = el("div", {});

  const render = () => {
    const rows = draft.rows.map((row, index) => {
      const notBox = el("input", { type: "checkbox" });
      notBox.checked = row.negated;
      notBox.addEventListener("change", () => { row.negated = notBox.checked; render(); });
      const remove = el("button", {}, "remove");
      remove.addEventListener("click", () => { draft.rows.splice(index, 1); render(); });
      return el("li", {},
        el("label", {}, notBox, " NOT "),
        conditionEditor(schema, row, (condition) => { row.condition = condition; render(); }),
        remove);
    });

    const kindSelect = select(
      ["measurement", "classification", "concept", "event", "time", "purpose"]
        .map((value) => ({ value })), "measurement", () => undefined);
    const add = el("button", {}, "add condition");
    add.addEventListener("click", () => {
      try {
        draft.rows.push({
          negated: false,
          condition: defaultCondition(schema, kindSelect.value as Condition["kind"]),
        });
        render();
      } catch (err) {
        output = errorBox(err);
        render();
      }
    });

    let textBox: HTMLElement;
    try {
      textBox = el("pre", { class: "dsl" }, draft.rows.length ? draftText(draft) : "(empty)");
    } catch (err) {
      textBox = errorBox(err);
    }

    const run = el("button", {}, "run");
    run.addEventListener("click", async () => {
      try {
        output = resultsTable(await api.query(draftText(draft)));
      } catch (err) {
        output = errorBox(err);
      }
      render();
    });
    const explain = el("button", {}, "explain");
    explain.addEventListener("click", async () => {
      try {
        const doc = await api.explain(draftText(draft));
        output = el("div", {},
          el("p", {}, `plan for ${doc.target}`),
          table(["atom", "resolution"], doc.atoms.map((atom) => [
            atom.text,
            atom.concepts
              ? `concepts: ${atom.concepts.join(", ")}${atom.unknown_predicate ? " (unknown predicate)" : ""}`
              : atom.base_value !== undefined
                ? `${atom.cvt_name ?? atom.cvt}, compared in base units as ${fmt(atom.base_value)}`
                : `${atom.candidates} candidate${atom.candidates === 1 ? "" : "s"}`,
          ])));
      } catch (err) {
        output = errorBox(err);
      }
      render();
    });

    root.replaceChildren(
      el("h2", {}, "Query builder"),
      el("p", {},
        "FIND ",
        select(TARGETS.map((value) => ({ value })), draft.target,
          (target) => { draft.target = target as Target; render(); }),
        " joining conditions with ",
        select([{ value: "AND" }, { value: "OR" }], draft.connective,
          (connective) => { draft.connective = connective as Connective; render(); })),
      el("ul", { class: "conditions" }, ...rows),
      el("p", {}, kindSelect, add),
      textBox,
      el("p", {}, run, " ", explain),
      output,
    );
  };
  render();
  return root;
}

// --- mapping review ---------------------------------------------------------

export function mappingsView(schema: SchemaCache): HTMLElement {
  const root = el("section", {});

  const render = async () => {
    let body: HTMLElement;
    try {
      const mappings = await api.mappings();
      body = table(
        ["form", "field", "category", "CVT", "unit", "concept", "state", ""],
        mappings.map((m) => {
          const state = m.confirmed ? "confirmed" : "pending";
          if (m.confirmed) {
            return [m.form, m.field, m.category, m.cvt ?? "", m.unit ?? "",
                    m.concept ?? "", state, ""];
          }
          const compatible = schema.cvts.filter((c) => c.category === m.category);
          const cvtSelect = select(
            compatible.map((c) => ({ value: c.id, label: c.name })),
            m.cvt ?? compatible[0]?.id ?? "", () => undefined);
          const conceptSelect = select(
            [{ value: "", label: "(none)" },
             ...schema.concepts.map((c) => ({ value: c.uri, label: `${c.label} (${c.uri})` }))],
            m.concept ?? "", () => undefined);
          const suggest = el("button", {}, "suggest");
          suggest.addEventListener("click", async () => {
            const name = schema.cvts.find((c) => c.id === m.cvt)?.name ?? m.field;
            const { suggestions } = await api.suggest(name);
            if (suggestions.length > 0) conceptSelect.value = suggestions[0]!.uri;
          });
          const confirm = el("button", {}, "confirm");
          confirm.addEventListener("click", async () => {
            try {
              await api.confirm(m.form, m.field, cvtSelect.value,
                                conceptSelect.value || undefined);
              await render();
            } catch (err) {
              root.append(errorBox(err));
            }
          });
          return [m.form, m.field, m.category, cvtSelect, el("span", {}, m.unit ?? ""),
                  el("span", {}, conceptSelect, suggest), state, confirm];
        }));
    } catch (err) {
      body = errorBox(err);
    }
    root.replaceChildren(el("h2", {}, "Field mappings"), body);
  };
  void render();
  return root;
}

// --- patient record tree ----------------------------------------------------

function cvLine(schema: SchemaCache, cv: CvNode): HTMLElement {
  const line = el("li", {}, `${cv.cvt_name} (${cv.category}): `);
  const value = cv.value;
  if (cv.category === "Measurement") {
    const quantity = value as { value: number; unit: string; unit_name: string };
    const stored = schema.units.units.find((u) => u.id === quantity.unit);
    const sameDim = schema.units.units.filter((u) => u.dimension === stored?.dimension);
    const shown = el("span", {}, `${fmt(quantity.value)} ${quantity.unit_name}`);
    line.append(shown);
    if (stored && sameDim.length > 1) {
      line.append(" as ", select(sameDim.map((u) => ({ value: u.id, label: u.name })),
        stored.id, (unitId) => {
          const target = sameDim.find((u) => u.id === unitId);
          if (!target) return;
          const base = quantity.value * stored.factor + stored.offset;
          const converted = (base - target.offset) / target.factor;
          shown.textContent = `${fmt(converted)} ${target.name}`;
        }));
    }
  } else {
    line.append(JSON.stringify(value));
  }
  return line;
}

function eventNode(schema: SchemaCache, event: EventNode): HTMLElement {
  const time = event.time.kind === "instant" ? event.time.at
    : event.time.kind === "interval" ? `${event.time.start} .. ${event.time.end}`
    : `${event.time.relation} ${event.time.anchor}`;
  return el("li", {},
    el("strong", {}, event.met_name), ` [${event.time.kind}: ${time}]`,
    el("ul", {}, ...event.cvs.map((cv) => cvLine(schema, cv))));
}

export function recordView(schema: SchemaCache): HTMLElement {
  const root = el("section", {});
  const input = el("input", { type: "text", placeholder: "patient id", size: "12" });
  const show = el("button", {}, "show");
  let body: HTMLElement = el("div", {});

  const render = () => {
    root.replaceChildren(
      el("h2", {}, "Patient record"),
      el("p", {}, input, " ", show),
      body);
  };
  show.addEventListener("click", async () => {
    try {
      const record = await api.record(input.value.trim());
      body = el("div", {},
        el("p", {}, `attributes: ${JSON.stringify(record.attributes)}`),
        record.links.length
          ? el("p", {}, `family: ${record.links.map((l) => `${l.relation} ${l.patient}`).join(", ")}`)
          : "",
        el("ul", {}, ...record.visits.map((visit) =>
          el("li", {},
            el("strong", {}, visit.timestamp), ` (${visit.purpose})`,
            el("ul", {}, ...visit.events.map((event) => eventNode(schema, event)))))));
    } catch (err) {
      body = errorBox(err);
    }
    render();
  });
  render();
  return root;
}
