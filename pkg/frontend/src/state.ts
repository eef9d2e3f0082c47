// View-model construction: one consistent snapshot in, render-ready rows out.

import type { FederationState, Member, SlaRow, TenantDoc } from './types.js';

export interface SectionGroup {
  cloud_id: string;
  color: string;
  sections: string[];
  units: number;
}

export interface TenantView {
  tenant_id: string;
  kind: string;
  owner: string | null;
  services: string[];
  hosts_smc: boolean;
  groups: SectionGroup[];
}

export interface ViewModel {
  federation_id: string;
  open: boolean;
  clock: number;
  ledger_tip: string;
  members: Member[];
  tenants: TenantView[];
  services: FederationState['services'];
}

// A small fixed palette keyed by the member's position, so a cloud keeps its
// color across refreshes as long as membership order is stable.
const PALETTE = ['#4e79a7', '#f28e2b', '#59a14f', '#e15759', '#b07aa1',
                 '#76b7b2', '#edc948', '#9c755f'];

export function cloudColors(members: Member[]): Map<string, string> {
  const colors = new Map<string, string>();
  members
    .map((m) => m.cloud_id)
    .sort()
    .forEach((cloud, index) => colors.set(cloud, PALETTE[index % PALETTE.length]));
  return colors;
}

export function groupSections(tenant: TenantDoc,
                              colors: Map<string, string>): SectionGroup[] {
  const byCloud = new Map<string, SectionGroup>();
  for (const section of tenant.sections) {
    let group = byCloud.get(section.cloud_id);
    if (!group) {
      group = {
        cloud_id: section.cloud_id,
        color: colors.get(section.cloud_id) ?? '#888888',
        sections: [],
        units: 0,
      };
      byCloud.set(section.cloud_id, group);
    }
    group.sections.push(section.section_id);
    group.units += section.units;
  }
  return [...byCloud.values()].sort((a, b) =>
    a.cloud_id.localeCompare(b.cloud_id));
}

export function buildViewModel(state: FederationState): ViewModel {
  const colors = cloudColors(state.members);
  return {
    federation_id: state.federation_id,
    open: state.open,
    clock: state.clock,
    ledger_tip: state.ledger_tip,
    members: state.members,
    tenants: state.tenants.map((tenant) => ({
      tenant_id: tenant.tenant_id,
      kind: tenant.kind,
      owner: tenant.owner,
      services: tenant.services,
      hosts_smc: tenant.hosts_smc,
      groups: groupSections(tenant, colors),
    })),
    services: state.services,
  };
}

export function slaBadge(row: SlaRow): string {
  if (row.orphan) return 'orphan';
  if (row.no_evidence) return 'no evidence';
  return row.compliant ? 'ok' : 'BREACH';
}
