// Mutation controllers for the administration forms. Each submits to the
// service, reports the outcome for a toast, and never decides permissions
// itself: a 4xx is shown with the server's wording.

import { ApiClient, RequestFailed } from './api.js';
import type { Credentials, ServiceDoc } from './types.js';

export interface ActionOutcome {
  ok: boolean;
  summary: string;
  detail?: string;
}

function failure(error: unknown): ActionOutcome {
  if (error instanceof RequestFailed) {
    return { ok: false, summary: error.detail.error, detail: error.detail.message };
  }
  return { ok: false, summary: 'ConnectionError', detail: String(error) };
}

export class ActionController {
  lastOffers: ServiceDoc[] = [];
  grants = new Set<string>();

  constructor(private readonly api: ApiClient) {}

  async join(cloudId: string, user: string, credential: string): Promise<ActionOutcome> {
    try {
      await this.api.join(cloudId, user, credential);
      return { ok: true, summary: `${cloudId} joined` };
    } catch (error) {
      return failure(error);
    }
  }

  async leave(cloudId: string, auth: Credentials): Promise<ActionOutcome> {
    try {
      await this.api.leave(cloudId, auth);
      return { ok: true, summary: `${cloudId} left` };
    } catch (error) {
      return failure(error);
    }
  }

  async requestService(auth: Credentials, characteristics: Record<string, string>,
                       demand: number): Promise<ActionOutcome> {
    try {
      const { offers } = await this.api.requestService(auth, characteristics, demand);
      this.lastOffers = offers;
      return { ok: true, summary: `${offers.length} offers` };
    } catch (error) {
      this.lastOffers = [];
      return failure(error);
    }
  }

  async selectOffer(auth: Credentials, serviceId: string): Promise<ActionOutcome> {
    if (!this.lastOffers.some((o) => o.service_id === serviceId)) {
      return { ok: false, summary: 'InvalidChoice',
               detail: `${serviceId} is not among the offered services` };
    }
    try {
      await this.api.selectOffer(auth, serviceId);
      this.grants.add(serviceId);
      return { ok: true, summary: `granted ${serviceId}` };
    } catch (error) {
      return failure(error);
    }
  }
}
