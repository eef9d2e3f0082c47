// Wire types mirroring the federation service's HTTP bodies.

export interface Member {
  cloud_id: string;
  status: 'ACTIVE' | 'LEAVING' | 'LEFT';
  capabilities: string[];
}

export interface SectionDoc {
  section_id: string;
  cloud_id: string;
  units: number;
  network: string;
}

export interface TenantDoc {
  tenant_id: string;
  kind: 'INFRASTRUCTURE' | 'OP_STANDARD' | 'OP_SEGREGATED';
  owner: string | null;
  sections: SectionDoc[];
  services: string[];
  hosts_smc: boolean;
}

export interface ServiceDoc {
  service_id: string;
  provider_cloud: string;
  tenant: string;
  capacity: number;
  unit_cost: number;
  availability: number;
  characteristics: Record<string, string>;
}

export interface FederationState {
  federation_id: string;
  open: boolean;
  grace_ms: number;
  members: Member[];
  tenants: TenantDoc[];
  services: ServiceDoc[];
  ledger_tip: string;
  clock: number;
}

export type AlertKind =
  | 'POLICY_MISMATCH'
  | 'SLA_VIOLATION'
  | 'AUDIT_FINDING'
  | 'OPERATIONS';

export interface AlertDoc {
  id: number;
  kind: AlertKind;
  severity: 'INFO' | 'WARN' | 'CRITICAL';
  subject: string;
  message: string;
  evidence: string[];
  timestamp: number;
}

export interface AlertsPage {
  alerts: AlertDoc[];
  cursor: number;
}

export interface SlaRow {
  service_id: string;
  metric: string;
  comparator: string | null;
  threshold: number | null;
  compliant: boolean | null;
  aggregate: number | null;
  since: number | null;
  orphan: boolean;
  no_evidence: boolean;
}

export interface PredicateDoc {
  path: string;
  operator: string;
  literal: string | string[];
}

export interface ObligationDoc {
  dts: string;
  operation: string;
  params: Record<string, unknown>;
}

export interface PolicyDoc {
  id: string;
  target: PredicateDoc[];
  effect: 'PERMIT' | 'DENY';
  obligations: ObligationDoc[];
  version: number;
}

export interface Credentials {
  cloud: string;
  user: string;
  credential: string;
}

export interface ApiError {
  status: number;
  error: string;
  message: string;
}
