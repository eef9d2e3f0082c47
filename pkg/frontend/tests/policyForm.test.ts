import { describe, expect, it } from 'vitest';
import { parsePolicyBuffer, validatePolicyDocument } from '../src/policyForm.js';

const GOOD = {
  id: 'p1',
  target: [{ path: 'subject.home_cloud', operator: 'equals', literal: 'b' }],
  effect: 'PERMIT',
  obligations: [{ dts: 'DM', operation: 'mask', params: {} }],
  version: 0,
};

describe('policy validation', () => {
  it('accepts a well-formed policy', () => {
    expect(validatePolicyDocument(GOOD)).toEqual([]);
  });

  it('flags unknown operators and namespaces by name', () => {
    const errors = validatePolicyDocument({
      ...GOOD,
      target: [
        { path: 'subject.x', operator: 'regex', literal: 'a' },
        { path: 'nowhere.x', operator: 'equals', literal: 'a' },
        { path: 'subject', operator: 'equals', literal: 'a' },
      ],
    });
    expect(errors.map((e) => e.message)).toEqual([
      "unknown operator 'regex'",
      "unknown namespace 'nowhere'",
      "'subject' predicates need an attribute name",
    ]);
  });

  it('rejects multi-party obligations and obligations on DENY', () => {
    const smc = validatePolicyDocument({
      ...GOOD, obligations: [{ dts: 'SMC', operation: 'sum', params: {} }],
    });
    expect(smc[0].message).toContain('SMC');
    const denyWithObligation = validatePolicyDocument({ ...GOOD, effect: 'DENY' });
    expect(denyWithObligation.some((e) => e.field === 'obligations')).toBe(true);
  });

  it('requires an in-set literal to be a list', () => {
    const errors = validatePolicyDocument({
      ...GOOD,
      target: [{ path: 'subject.id', operator: 'in-set', literal: 'oops' }],
    });
    expect(errors[0].message).toContain('list');
  });
});

describe('policy buffer parsing', () => {
  it('parses a JSON array of policies', () => {
    const { policies, errors } = parsePolicyBuffer(JSON.stringify([GOOD]));
    expect(errors).toEqual([]);
    expect(policies).toHaveLength(1);
  });

  it('reports broken JSON instead of throwing', () => {
    const { policies, errors } = parsePolicyBuffer('{nope');
    expect(policies).toEqual([]);
    expect(errors[0].message).toContain('not valid JSON');
  });

  it('prefixes field errors with the policy index', () => {
    const { errors } = parsePolicyBuffer(JSON.stringify([GOOD, { id: '', target: [], effect: 'NO' }]));
    expect(errors.every((e) => e.field.startsWith('policy[1]'))).toBe(true);
  });
});
