/** Payload shapes of the review service API (all responses carry the
 * current graph version). */

export interface ItemSummary {
  id: string;
  node: number;
  score: number;
  status: "open" | "resolved";
  graph_version: number;
  resolution: Resolution | null;
  resolved_score: number | null;
}

export interface QueuePage {
  items: ItemSummary[];
  page: number;
  page_size: number;
  total: number;
  graph_version: number;
  threshold: number;
}

export interface ClauseContribution {
  clause: number;
  text: string;
  bits: number;
  outcome: "satisfied" | "violated";
}

export interface ViolatedClause {
  text: string;
  bits: number;
  witness: Record<string, number>;
}

export interface RepairProposal {
  rank: number;
  description: string;
  predicted_score_after: number;
  edit_cost: number;
  graph_version: number;
}

export interface NeighborRow {
  node: number;
  kind: string;
  relation: string;
  t: number;
  attrs: Record<string, unknown>;
}

export interface ItemDetail extends ItemSummary {
  contributions: ClauseContribution[];
  violated_clauses: ViolatedClause[];
  repairs: RepairProposal[];
  neighborhood: NeighborRow[];
  node_kind: string;
  node_attrs: Record<string, unknown>;
}

export interface Resolution {
  action: "apply_repair" | "mark_valid" | "reject";
  actor: string;
  repair_index?: number | null;
  timestamp?: number;
}

export interface ResolutionResult {
  item: ItemSummary;
  graph_version: number;
  new_score?: number;
  below_threshold?: boolean;
}

export interface ServiceStats {
  graph_version: number;
  nodes: number;
  edges: number;
  grammar_size: number;
  threshold: number;
  flagged: number;
  open_items: number;
  score_quantiles: Record<string, number>;
}

export interface GrammarClause {
  index: number;
  text: string;
  applicable: number;
  satisfied: number;
  confidence: number;
}

export interface GrammarView {
  graph_version: number;
  clauses: GrammarClause[];
}

export interface QueueFilter {
  minScore?: number;
  status?: "open" | "resolved";
}
