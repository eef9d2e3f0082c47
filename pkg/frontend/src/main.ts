// Application wiring: one render loop over snapshot polls, one alert
// stream, one in-flight mutation per form.

import { ApiClient } from './api.js';
import { AlertPanel, AlertStream } from './alerts.js';
import { ActionController } from './actions.js';
import { AmendmentForm } from './policyForm.js';
import { buildViewModel } from './state.js';
import { renderAlertRow, renderBanner, renderSlaReport, renderState, toast } from './render.js';
import type { Credentials } from './types.js';

const api = new ApiClient('');
const actions = new ActionController(api);
const amendment = new AmendmentForm(api);
const panel = new AlertPanel();

function $(id: string): HTMLElement {
  const element = document.getElementById(id);
  if (!element) throw new Error(`missing element #${id}`);
  return element;
}

function readAuth(prefix: string): Credentials {
  return {
    cloud: ($(`${prefix}-cloud`) as HTMLInputElement).value,
    user: ($(`${prefix}-user`) as HTMLInputElement).value,
    credential: ($(`${prefix}-credential`) as HTMLInputElement).value,
  };
}

let snapshotInFlight = false;

async function refresh(): Promise<void> {
  if (snapshotInFlight) return;
  snapshotInFlight = true;
  try {
    const state = await api.fetchState();
    renderState(document.body, buildViewModel(state), actions.grants);
    const { report } = await api.fetchSlaReport();
    renderSlaReport($('sla-report'), report);
    renderBanner($('banner'), true);
  } catch {
    renderBanner($('banner'), false); // keep the stale snapshot on screen
  } finally {
    snapshotInFlight = false;
  }
}

function startAlertStream(): void {
  const list = $('alert-list');
  const stream = new AlertStream(
    (cursor, waitMs) => api.fetchAlerts(cursor, waitMs),
    {
      onAlert: (alert) => {
        if (panel.append(alert)) {
          list.insertAdjacentHTML('beforeend', renderAlertRow(alert));
          if (alert.severity === 'CRITICAL') void refresh();
        }
      },
      onConnectionChange: (up) => renderBanner($('banner'), up),
      waitMs: 15_000,
    },
  );
  void stream.run();
}

function wireForms(): void {
  $('join-form').addEventListener('submit', async (event) => {
    event.preventDefault();
    const outcome = await actions.join(
      ($('join-cloud') as HTMLInputElement).value,
      ($('join-user') as HTMLInputElement).value,
      ($('join-credential') as HTMLInputElement).value);
    toast($('toasts'), outcome.ok, outcome.summary, outcome.detail);
    if (outcome.ok) void refresh();
  });

  $('leave-form').addEventListener('submit', async (event) => {
    event.preventDefault();
    const outcome = await actions.leave(
      ($('leave-cloud') as HTMLInputElement).value, readAuth('leave'));
    toast($('toasts'), outcome.ok, outcome.summary, outcome.detail);
    if (outcome.ok) void refresh();
  });

  $('request-form').addEventListener('submit', async (event) => {
    event.preventDefault();
    let characteristics: Record<string, string> = {};
    try {
      characteristics = JSON.parse(
        ($('request-characteristics') as HTMLTextAreaElement).value || '{}');
    } catch (error) {
      toast($('toasts'), false, 'invalid characteristics JSON', String(error));
      return;
    }
    const outcome = await actions.requestService(
      readAuth('request'), characteristics,
      Number(($('request-demand') as HTMLInputElement).value || '1'));
    toast($('toasts'), outcome.ok, outcome.summary, outcome.detail);
    $('offers').innerHTML = actions.lastOffers.map((o) =>
      `<li>${o.service_id} @ ${o.provider_cloud} ` +
      `(cost ${o.unit_cost}, avail ${o.availability}) ` +
      `<button data-select="${o.service_id}">select</button></li>`).join('');
  });

  $('offers').addEventListener('click', async (event) => {
    const button = event.target as HTMLElement;
    const serviceId = button.dataset?.select;
    if (!serviceId) return;
    const outcome = await actions.selectOffer(readAuth('request'), serviceId);
    toast($('toasts'), outcome.ok, outcome.summary, outcome.detail);
    if (outcome.ok) void refresh();
  });

  $('amend-form').addEventListener('submit', async (event) => {
    event.preventDefault();
    const status = await amendment.submit(
      ($('amend-service') as HTMLInputElement).value,
      readAuth('amend'),
      ($('amend-buffer') as HTMLTextAreaElement).value);
    const output = $('amend-status');
    if (status.state === 'invalid') {
      output.innerHTML = '<ul>' + status.errors.map((e) =>
        `<li>${e.field}: ${e.message}</li>`).join('') + '</ul>';
    } else if (status.state === 'denied') {
      output.textContent = `${status.error}: ${status.message}`;
    } else if (status.state === 'accepted') {
      output.textContent = 'amended';
      void refresh();
    }
  });

  $('verify-ledger').addEventListener('click', async () => {
    const verdict = await api.verifyLedger();
    toast($('toasts'), verdict.valid,
          verdict.valid ? 'chain valid'
                        : `violation at block ${verdict.first_bad_index}`);
  });
}

document.addEventListener('DOMContentLoaded', () => {
  wireForms();
  startAlertStream();
  void refresh();
  setInterval(() => void refresh(), 5000);
});
