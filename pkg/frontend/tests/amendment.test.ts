// Action surfacing: a denied policy amendment renders the server's wording
// untouched, and the mock service records no mutation (its ledger digest is
// unchanged). Permission decisions live entirely on the server.

import { describe, expect, it } from 'vitest';
import { ApiClient } from '../src/api.js';
import { AmendmentForm } from '../src/policyForm.js';

const DENIAL = 'amendment denied: fields not editable by grant: effect';

/** In-memory stand-in for the federation service's amendment endpoint. */
function mockService() {
  const state = {
    ledgerTip: 'aaaa1111',
    mutations: 0,
  };
  const fetchImpl = async (url: string, init?: RequestInit): Promise<Response> => {
    if (url.endsWith('/policies') && init?.method === 'POST') {
      const body = JSON.parse(String(init.body));
      if (body.auth.user !== 'owner') {
        return new Response(
          JSON.stringify({ detail: { error: 'Unauthorized', message: DENIAL } }),
          { status: 403, headers: { 'content-type': 'application/json' } });
      }
      state.mutations += 1;
      state.ledgerTip = `tip-${state.mutations}`;
      return new Response(JSON.stringify({ service_id: 'svc', policies: 1 }),
                          { status: 200 });
    }
    return new Response(JSON.stringify({ detail: { error: 'Error', message: 'no route' } }),
                        { status: 404 });
  };
  return { state, fetchImpl };
}

const VALID_BUFFER = JSON.stringify([{
  id: 'p1',
  target: [{ path: 'subject.home_cloud', operator: 'equals', literal: 'b' }],
  effect: 'PERMIT',
  obligations: [],
  version: 1,
}]);

describe('policy amendment surfacing', () => {
  it('renders a denial verbatim and leaves the service unmutated', async () => {
    const { state, fetchImpl } = mockService();
    const form = new AmendmentForm(new ApiClient('', fetchImpl));
    const tipBefore = state.ledgerTip;

    const status = await form.submit('svc',
      { cloud: 'a', user: 'tenant-admin', credential: 'pw' }, VALID_BUFFER);

    expect(status.state).toBe('denied');
    if (status.state === 'denied') {
      expect(status.message).toBe(DENIAL); // word for word
      expect(status.error).toBe('Unauthorized');
    }
    expect(state.mutations).toBe(0);
    expect(state.ledgerTip).toBe(tipBefore);
  });

  it('lets an authorized edit through and reports acceptance', async () => {
    const { state, fetchImpl } = mockService();
    const form = new AmendmentForm(new ApiClient('', fetchImpl));
    const status = await form.submit('svc',
      { cloud: 'a', user: 'owner', credential: 'pw' }, VALID_BUFFER);
    expect(status.state).toBe('accepted');
    expect(state.mutations).toBe(1);
  });

  it('stops client-side on malformed documents without calling the server', async () => {
    const { state, fetchImpl } = mockService();
    const form = new AmendmentForm(new ApiClient('', fetchImpl));
    const status = await form.submit('svc',
      { cloud: 'a', user: 'owner', credential: 'pw' },
      JSON.stringify([{ id: 'p1', target: [], effect: 'MAYBE', obligations: [] }]));
    expect(status.state).toBe('invalid');
    expect(state.mutations).toBe(0);
  });
});
