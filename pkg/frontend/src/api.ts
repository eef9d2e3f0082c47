// Thin typed client for the federation service. Every mutation is decided
// server-side; this layer only moves documents and surfaces errors verbatim.

import type {
  AlertsPage,
  ApiError,
  Credentials,
  FederationState,
  PolicyDoc,
  ServiceDoc,
  SlaRow,
} from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class RequestFailed extends Error {
  readonly detail: ApiError;

  constructor(detail: ApiError) {
    super(detail.message);
    this.detail = detail;
  }
}

async function decodeError(response: Response): Promise<ApiError> {
  try {
    const body = await response.json();
    if (body && body.detail && typeof body.detail.message === 'string') {
      return {
        status: response.status,
        error: body.detail.error ?? 'Error',
        message: body.detail.message,
      };
    }
    return { status: response.status, error: 'Error', message: JSON.stringify(body) };
  } catch {
    return { status: response.status, error: 'Error', message: response.statusText };
  }
}

export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async get<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(this.base + path);
    if (!response.ok) throw new RequestFailed(await decodeError(response));
    return response.json() as Promise<T>;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await this.fetchImpl(this.base + path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!response.ok) throw new RequestFailed(await decodeError(response));
    return response.json() as Promise<T>;
  }

  fetchState(): Promise<FederationState> {
    return this.get('/federation');
  }

  fetchAlerts(cursor: number, waitMs = 0): Promise<AlertsPage> {
    return this.get(`/alerts?cursor=${cursor}&wait_ms=${waitMs}`);
  }

  fetchSlaReport(): Promise<{ report: SlaRow[] }> {
    return this.get('/sla/report');
  }

  fetchLedgerBlocks(start = 0, count = 20): Promise<{ blocks: unknown[] }> {
    return this.get(`/ledger/blocks?start=${start}&count=${count}`);
  }

  verifyLedger(): Promise<{ valid: boolean; first_bad_index: number | null }> {
    return this.get('/ledger/verify');
  }

  join(cloudId: string, user: string, credential: string, signed = true) {
    return this.post('/members/join', {
      cloud_id: cloudId,
      credentials: { user, credential, sfac_signed: signed },
    });
  }

  leave(cloudId: string, auth: Credentials) {
    return this.post(`/members/${cloudId}/leave`, { auth });
  }

  amendPolicies(serviceId: string, auth: Credentials, policies: PolicyDoc[]) {
    return this.post(`/services/${serviceId}/policies`, { auth, policies });
  }

  requestService(
    auth: Credentials,
    characteristics: Record<string, string>,
    demand: number,
    objective = 'MIN_COST',
  ): Promise<{ offers: ServiceDoc[] }> {
    return this.post('/requests', { auth, characteristics, demand, objective });
  }

  selectOffer(auth: Credentials, serviceId: string) {
    return this.post('/requests/select', { auth, service_id: serviceId });
  }

  useService(auth: Credentials, serviceId: string, action: string, payload: unknown) {
    return this.post(`/services/${serviceId}/use`, { auth, action, payload });
  }
}
