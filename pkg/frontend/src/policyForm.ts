// Policy editor: client-side form validation mirroring the server's policy
// grammar, plus the amendment submit flow. Validation here only saves a
// round trip; the administration point on the server is the authority, and
// its denial reason is rendered verbatim.

import { ApiClient, RequestFailed } from './api.js';
import type { Credentials, PolicyDoc } from './types.js';

export const OPERATORS = ['equals', 'not-equals', 'in-set', 'lte', 'gte'];
export const NAMESPACES = ['subject', 'action', 'resource', 'environment'];
export const DTS_TARGETS = ['DM', 'ANM'];

export interface FieldError {
  field: string;
  message: string;
}

export function validatePolicyDocument(doc: unknown): FieldError[] {
  const errors: FieldError[] = [];
  if (typeof doc !== 'object' || doc === null || Array.isArray(doc)) {
    return [{ field: '', message: 'policy must be an object' }];
  }
  const policy = doc as Partial<PolicyDoc>;
  if (!policy.id || typeof policy.id !== 'string') {
    errors.push({ field: 'id', message: 'id is required' });
  }
  if (policy.effect !== 'PERMIT' && policy.effect !== 'DENY') {
    errors.push({ field: 'effect', message: `effect must be PERMIT or DENY` });
  }
  (policy.target ?? []).forEach((pred, i) => {
    const where = `target[${i}]`;
    if (!OPERATORS.includes(pred.operator)) {
      errors.push({ field: `${where}.operator`,
                    message: `unknown operator '${pred.operator}'` });
    }
    const namespace = (pred.path ?? '').split('.', 1)[0];
    if (!NAMESPACES.includes(namespace)) {
      errors.push({ field: `${where}.path`,
                    message: `unknown namespace '${namespace}'` });
    } else if (namespace !== 'action' && !(pred.path ?? '').includes('.')) {
      errors.push({ field: `${where}.path`,
                    message: `'${namespace}' predicates need an attribute name` });
    }
    if (pred.operator === 'in-set' && !Array.isArray(pred.literal)) {
      errors.push({ field: `${where}.literal`,
                    message: 'in-set needs a list literal' });
    }
  });
  (policy.obligations ?? []).forEach((obl, i) => {
    if (obl.dts === 'SMC') {
      errors.push({ field: `obligations[${i}].dts`,
                    message: 'SMC backs providers and cannot transform a result' });
    } else if (!DTS_TARGETS.includes(obl.dts)) {
      errors.push({ field: `obligations[${i}].dts`,
                    message: `unknown dts '${obl.dts}'` });
    }
  });
  if (policy.effect === 'DENY' && (policy.obligations ?? []).length > 0) {
    errors.push({ field: 'obligations',
                  message: 'obligations are only meaningful on PERMIT' });
  }
  return errors;
}

export function parsePolicyBuffer(text: string): { policies: PolicyDoc[]; errors: FieldError[] } {
  let parsed: unknown;
  try {
    parsed = JSON.parse(text);
  } catch (error) {
    return { policies: [], errors: [{ field: '', message: `not valid JSON: ${error}` }] };
  }
  const docs = Array.isArray(parsed) ? parsed : [parsed];
  const errors = docs.flatMap((doc, i) =>
    validatePolicyDocument(doc).map((e) => ({
      field: `policy[${i}]${e.field ? '.' + e.field : ''}`,
      message: e.message,
    })));
  return { policies: errors.length ? [] : (docs as PolicyDoc[]), errors };
}

export type AmendmentStatus =
  | { state: 'idle' }
  | { state: 'invalid'; errors: FieldError[] }
  | { state: 'submitting' }
  | { state: 'denied'; error: string; message: string }
  | { state: 'accepted' };

/** Drives one policy-amendment form: validate locally, submit, and hold the
 * outcome for rendering. Server denials are kept word for word. */
export class AmendmentForm {
  status: AmendmentStatus = { state: 'idle' };

  constructor(private readonly api: ApiClient) {}

  async submit(serviceId: string, auth: Credentials, buffer: string): Promise<AmendmentStatus> {
    const { policies, errors } = parsePolicyBuffer(buffer);
    if (errors.length) {
      this.status = { state: 'invalid', errors };
      return this.status;
    }
    this.status = { state: 'submitting' };
    try {
      await this.api.amendPolicies(serviceId, auth, policies);
      this.status = { state: 'accepted' };
    } catch (error) {
      if (error instanceof RequestFailed) {
        this.status = { state: 'denied', error: error.detail.error,
                        message: error.detail.message };
      } else {
        this.status = { state: 'denied', error: 'ConnectionError',
                        message: String(error) };
      }
    }
    return this.status;
  }
}
