/** Query drafts and their serialization into the engine's query language.
 *
 * A draft is what the builder UI edits: a target, one connective and a
 * flat list of optionally negated conditions. Serialization mirrors the
 * server's own text rendering, so a draft built from dropdown values is
 * guaranteed to parse server-side. Values that cannot be tokenized
 * (embedded quotes, malformed identifiers, non-finite numbers) are
 * rejected here rather than by a server error after the round trip.
 */

export type Target = "patients" | "visits" | "events" | "cvs";
export type Comparator = "<" | "<=" | "=" | "!=" | ">=" | ">";
export type Direction = "forward" | "inverse";
export type Connective = "AND" | "OR";

export const TARGETS: readonly Target[] = ["patients", "visits", "events", "cvs"];
export const COMPARATORS: readonly Comparator[] = ["<", "<=", "=", "!=", ">=", ">"];

export type Condition =
  | { kind: "measurement"; cvt: string; op: Comparator; value: number; unit: string }
  | { kind: "classification"; cvt: string; item: string }
  | { kind: "concept"; cvt?: string; root: string; predicate?: string; direction?: Direction }
  | { kind: "event"; met: string }
  | { kind: "time"; op: Comparator; instant: string }
  | { kind: "purpose"; purpose: string };

export interface ConditionRow {
  negated: boolean;
  condition: Condition;
}

export interface QueryDraft {
  target: Target;
  connective: Connective;
  rows: ConditionRow[];
}

// identifier and string tokens as the server's tokenizer defines them
const IDENT = /^[A-Za-z_][A-Za-z0-9_-]*$/;

function ident(value: string, what: string): string {
  if (!IDENT.test(value)) throw new Error(`${what} is not an identifier: ${JSON.stringify(value)}`);
  return value;
}

function quoted(value: string, what: string): string {
  if (value.includes('"')) throw new Error(`${what} must not contain a double quote`);
  return `"${value}"`;
}

function number(value: number): string {
  if (!Number.isFinite(value)) throw new Error(`not a finite number: ${value}`);
  return String(value);
}

export function conditionText(c: Condition): string {
  switch (c.kind) {
    case "measurement":
      return `cv(${ident(c.cvt, "CVT")}) ${c.op} ${number(c.value)} ${quoted(c.unit, "unit")}`;
    case "classification":
      return `cv(${ident(c.cvt, "CVT")}) IS ${quoted(c.item, "item")}`;
    case "concept": {
      const head = `concept(${c.cvt === undefined ? "" : ident(c.cvt, "CVT")}) IN`;
      if (c.predicate === undefined) return `${head} ${quoted(c.root, "concept")}`;
      const direction = c.direction ?? "forward";
      return `${head} expand(${quoted(c.root, "concept")}, ${quoted(c.predicate, "predicate")}, ${direction})`;
    }
    case "event":
      return `event IS ${ident(c.met, "MET")}`;
    case "time":
      return `time ${c.op} ${quoted(c.instant, "instant")}`;
    case "purpose":
      return `purpose IS ${quoted(c.purpose, "purpose")}`;
  }
}

export function draftText(draft: QueryDraft): string {
  if (draft.rows.length === 0) throw new Error("a draft needs at least one condition");
  const parts = draft.rows.map((row) => {
    const atom = conditionText(row.condition);
    return row.negated ? `NOT ${atom}` : atom;
  });
  return `FIND ${draft.target} WHERE ${parts.join(` ${draft.connective} `)}`;
}
