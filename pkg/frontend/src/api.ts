/** Typed client for the engine's HTTP API.
 *
 * Paths are origin-absolute: the workbench is served from /ui/ on the same
 * host as the API. Error bodies are {code, detail}; they surface as
 * ApiError so views can show the detail verbatim.
 */

export interface CvtRecord {
  id: string;
  kind: "cvt";
  name: string;
  category: string;
  dimension: string | null;
  classification: string | null;
}

export interface MetRecord {
  id: string;
  kind: "met";
  name: string;
  members: string[];
  relationships: { from: string; name: string; to: string }[];
}

export interface ClassificationRecord {
  id: string;
  name: string;
  items: string[];
}

export interface UnitRecord {
  id: string;
  name: string;
  dimension: string;
  factor: number;
  offset: number;
}

export interface DimensionRecord {
  id: string;
  base_unit: string;
}

export interface UnitsDoc {
  units: UnitRecord[];
  dimensions: DimensionRecord[];
}

export interface ConceptRecord {
  uri: string;
  label: string;
  type: string;
  source: string;
}

export interface ExpansionDoc {
  start: string;
  predicate: string;
  direction: string;
  concepts: string[];
  unknown_predicate: boolean;
}

export interface MatchedCv {
  cv: string;
  cvt: string;
  display: string;
  event: string;
  met_name: string;
  timestamp: string | null;
  visit: string;
}

export interface ResultRow {
  id: string;
  kind: string;
  matched: MatchedCv[];
}

export interface QueryResult {
  target: string;
  count: number;
  rows: ResultRow[];
}

export interface ExplainAtom {
  kind: string;
  text: string;
  candidates: number;
  cvt?: string;
  cvt_name?: string;
  base_value?: number;
  concepts?: string[];
  concept_count?: number;
  unknown_predicate?: boolean;
  met_name?: string;
}

export interface ExplainDoc {
  target: string;
  query: string;
  atoms: ExplainAtom[];
}

export interface Suggestion {
  uri: string;
  label: string;
  score: number;
}

export interface MappingRecord {
  form: string;
  field: string;
  category: string;
  cvt: string | null;
  unit: string | null;
  concept: string | null;
  transform: string;
  confirmed: boolean;
}

export interface PatientRecord {
  id: string;
  attributes: Record<string, string>;
  links: { relation: string; patient: string }[];
  visits: VisitNode[];
}

export interface VisitNode {
  id: string;
  timestamp: string;
  purpose: string;
  events: EventNode[];
}

export interface EventNode {
  id: string;
  met: string;
  met_name: string;
  time: { kind: string; at?: string; start?: string; end?: string; anchor?: string; relation?: string };
  cvs: CvNode[];
}

export interface CvNode {
  id: string;
  cvt: string;
  cvt_name: string;
  category: string;
  value: Record<string, unknown>;
}

export class ApiError extends Error {
  constructor(readonly code: string, readonly detail: string, readonly status: number) {
    super(`${code}: ${detail}`);
  }
}

/** `base` is empty in the browser (same origin as /ui/) and an absolute
 *  http://host:port prefix when the client runs outside one. */
export function apiClient(base = "") {
  async function request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(base + path, init);
    const body = await response.json();
    if (!response.ok) {
      throw new ApiError(body.code ?? "Error", body.detail ?? response.statusText, response.status);
    }
    return body as T;
  }

  function post<T>(path: string, payload: unknown): Promise<T> {
    return request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  return {
    cvts: () => request<CvtRecord[]>("/schema/cvts"),
    mets: () => request<MetRecord[]>("/schema/mets"),
    classifications: () => request<ClassificationRecord[]>("/schema/classifications"),
    units: () => request<UnitsDoc>("/schema/units"),
    concepts: () => request<ConceptRecord[]>("/concepts"),
    expand: (uri: string, predicate: string, direction: string) =>
      request<ExpansionDoc>(
        `/concepts/${encodeURIComponent(uri)}/expand?predicate=${encodeURIComponent(predicate)}&direction=${encodeURIComponent(direction)}`),
    conceptCvts: (uri: string) =>
      request<{ uri: string; cvts: string[] }>(`/concepts/${encodeURIComponent(uri)}/cvts`),
    record: (patientId: string) =>
      request<PatientRecord>(`/patients/${encodeURIComponent(patientId)}/record`),
    query: (text: string) => post<QueryResult>("/query", { text }),
    explain: (text: string) => post<ExplainDoc>("/query/explain", { text }),
    suggest: (label: string, k?: number) =>
      post<{ label: string; suggestions: Suggestion[] }>("/ingest/suggest", { label, k }),
    confirm: (form: string, field: string, cvt: string, concept?: string) =>
      post<MappingRecord>("/ingest/confirm", { form, field, cvt, concept }),
    mappings: (form?: string) =>
      request<MappingRecord[]>(form ? `/ingest/mappings?form=${encodeURIComponent(form)}` : "/ingest/mappings"),
  };
}

export type Api = ReturnType<typeof apiClient>;

export const api: Api = apiClient();
