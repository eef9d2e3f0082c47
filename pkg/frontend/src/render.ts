// DOM rendering: plain template strings into container elements. State flows
// one way: a snapshot or alert list in, innerHTML out.

import type { AlertDoc, Member, SlaRow } from './types.js';
import type { TenantView, ViewModel } from './state.js';
import { alertTarget } from './alerts.js';
import { slaBadge } from './state.js';

function esc(text: unknown): string {
  return String(text)
    .replaceAll('&', '&amp;')
    .replaceAll('<', '&lt;')
    .replaceAll('>', '&gt;')
    .replaceAll('"', '&quot;');
}

export function renderBanner(element: HTMLElement, up: boolean): void {
  element.textContent = up ? '' : 'connection lost: showing the last snapshot';
  element.className = up ? 'banner hidden' : 'banner error';
}

export function renderMembers(element: HTMLElement, members: Member[]): string {
  const rows = members.map((m) =>
    `<tr><td>${esc(m.cloud_id)}</td>` +
    `<td class="status-${m.status.toLowerCase()}">${esc(m.status)}</td>` +
    `<td>${m.capabilities.map(esc).join(', ')}</td></tr>`).join('');
  const html = `<table><thead><tr><th>cloud</th><th>status</th>` +
    `<th>capabilities</th></tr></thead><tbody>${rows}</tbody></table>`;
  element.innerHTML = html;
  return html;
}

export function renderTenant(tenant: TenantView): string {
  const groups = tenant.groups.map((group) =>
    `<span class="section-group" style="background:${group.color}" ` +
    `title="${esc(group.sections.join(', '))}">` +
    `${esc(group.cloud_id)} (${group.sections.length})</span>`).join(' ');
  const badges = [
    tenant.kind,
    tenant.owner ? `owner ${tenant.owner}` : 'shared',
    tenant.hosts_smc ? 'multi-party' : '',
  ].filter(Boolean).map((b) => `<span class="badge">${esc(b)}</span>`).join(' ');
  return `<div class="tenant"><h4>${esc(tenant.tenant_id)}</h4>` +
    `${badges}<div class="groups">${groups}</div>` +
    `<div class="svc">${tenant.services.map(esc).join(', ')}</div></div>`;
}

export function renderState(root: HTMLElement, model: ViewModel,
                            grants: Set<string>): void {
  const membersDiv = root.querySelector('#members') as HTMLElement;
  renderMembers(membersDiv, model.members);
  const tenantsDiv = root.querySelector('#tenants') as HTMLElement;
  tenantsDiv.innerHTML = model.tenants.map(renderTenant).join('');
  const servicesDiv = root.querySelector('#services') as HTMLElement;
  servicesDiv.innerHTML = `<table><thead><tr><th>service</th><th>provider</th>` +
    `<th>capacity</th><th>cost</th><th>availability</th><th></th></tr></thead>` +
    `<tbody>` + model.services.map((s) =>
      `<tr><td>${esc(s.service_id)}</td><td>${esc(s.provider_cloud)}</td>` +
      `<td>${s.capacity}</td><td>${s.unit_cost}</td><td>${s.availability}</td>` +
      `<td>${grants.has(s.service_id) ? '<span class="badge grant">granted</span>' : ''}</td></tr>`,
    ).join('') + `</tbody></table>`;
  (root.querySelector('#tip') as HTMLElement).textContent =
    `ledger ${model.ledger_tip.slice(0, 16)}.. at t=${model.clock}`;
}

export function renderAlertRow(alert: AlertDoc): string {
  const target = alertTarget(alert);
  const link = target.refs.length
    ? ` <a href="#${target.view}" data-refs="${esc(target.refs.join(','))}">evidence</a>`
    : alert.kind === 'SLA_VIOLATION' ? ` <a href="#sla-report">report</a>` : '';
  return `<li class="sev-${alert.severity.toLowerCase()}" data-id="${alert.id}">` +
    `[${alert.id}] ${esc(alert.kind)} ${esc(alert.subject)}: ` +
    `${esc(alert.message)}${link}</li>`;
}

export function renderSlaReport(element: HTMLElement, rows: SlaRow[]): void {
  element.innerHTML = `<table><thead><tr><th>service</th><th>metric</th>` +
    `<th>state</th><th>mean</th></tr></thead><tbody>` + rows.map((row) =>
      `<tr><td>${esc(row.service_id)}</td><td>${esc(row.metric)}</td>` +
      `<td>${esc(slaBadge(row))}</td>` +
      `<td>${row.aggregate == null ? '-' : row.aggregate.toFixed(2)}</td></tr>`,
    ).join('') + `</tbody></table>`;
}

export function toast(element: HTMLElement, ok: boolean, summary: string,
                      detail?: string): void {
  const item = document.createElement('div');
  item.className = ok ? 'toast ok' : 'toast error';
  item.textContent = detail ? `${summary}: ${detail}` : summary;
  element.appendChild(item);
  setTimeout(() => item.remove(), 6000);
}
