/** SDK behavior against a live server: session mechanics, parallel clients
 * with distinct ids, error mapping, and retry across a server restart. */

import { mkdtempSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { ConnectionError, TunerApiError, TunerClient } from '../src/client.js';
import type { StudySpec } from '../src/types.js';
import { sleep, startServer, type ServerHandle } from './server.js';

function basicSpec(): StudySpec {
  return {
    search_space: [{ name: 'x', kind: 'DOUBLE', bounds: [0, 1], scale: 'LINEAR' }],
    metrics: [{ name: 'objective', goal: 'MAXIMIZE' }],
    algorithm: 'RANDOM_SEARCH',
  };
}

describe('client sessions', () => {
  let server: ServerHandle;

  beforeAll(async () => {
    server = await startServer();
  });

  afterAll(async () => {
    await server.stop();
  });

  it('runs a 10-trial tuning loop to completion', async () => {
    const client = await TunerClient.loadOrCreateStudy(
      server.address, 'loop', basicSpec(), 'worker-0',
    );
    for (let i = 0; i < 10; i++) {
      const [trial] = await client.getSuggestions(1);
      const x = trial.parameters['x'] as number;
      await client.completeTrial(trial.id, { metrics: { objective: 1 - x * x } });
    }
    const study = await client.getStudy();
    expect(study.trials).toHaveLength(10);
    expect(study.trials.map((t) => t.id)).toEqual([...Array(10)].map((_, i) => i + 1));
    expect(study.trials.every((t) => t.state === 'COMPLETED')).toBe(true);
  });

  it('hands a rejoining client_id its still-active trial', async () => {
    const first = await TunerClient.loadOrCreateStudy(
      server.address, 'rejoin', basicSpec(), 'flaky',
    );
    const [original] = await first.getSuggestions(1);
    // the worker dies here; its replacement carries the same id
    const second = await TunerClient.loadOrCreateStudy(
      server.address, 'rejoin', basicSpec(), 'flaky',
    );
    const [again] = await second.getSuggestions(1);
    expect(again.id).toBe(original.id);
    expect(again.parameters).toEqual(original.parameters);
  });

  it('keeps parallel clients with distinct ids disjoint', async () => {
    const a = await TunerClient.loadOrCreateStudy(
      server.address, 'parallel', basicSpec(), 'client-a',
    );
    const b = await TunerClient.loadOrCreateStudy(
      server.address, 'parallel', basicSpec(), 'client-b',
    );
    const [fromA, fromB] = await Promise.all([
      a.getSuggestions(2),
      b.getSuggestions(2),
    ]);
    const idsA = new Set(fromA.map((t) => t.id));
    for (const t of fromB) expect(idsA.has(t.id)).toBe(false);
    for (const t of fromA) expect(t.client_id).toBe('client-a');
    for (const t of fromB) expect(t.client_id).toBe('client-b');
  });

  it('surfaces server errors with their wire code', async () => {
    const client = await TunerClient.loadOrCreateStudy(
      server.address, 'errs', basicSpec(), 'w',
    );
    await expect(client.getTrial(999)).rejects.toMatchObject({
      name: 'TunerApiError',
      code: 'NotFound',
      status: 404,
    });
    await expect(
      TunerClient.loadOrCreateStudy(
        server.address, 'errs',
        { ...basicSpec(), algorithm: 'GRID_SEARCH' }, 'w',
      ),
    ).rejects.toMatchObject({ code: 'SpecMismatch', status: 409 });
  });

  it('reports infeasible completions', async () => {
    const client = await TunerClient.loadOrCreateStudy(
      server.address, 'infeasible', basicSpec(), 'w',
    );
    const [trial] = await client.getSuggestions(1);
    const done = await client.completeTrial(trial.id, {
      infeasibilityReason: 'diverged',
    });
    expect(done.state).toBe('COMPLETED');
    expect(done.infeasible).toBe(true);
    expect(done.infeasibility_reason).toBe('diverged');
  });

  it('gives up with ConnectionError when nothing listens', async () => {
    await expect(
      TunerClient.loadOrCreateStudy(
        'http://127.0.0.1:9', 'nope', basicSpec(), 'w',
        { retry: { maxAttempts: 3, baseDelayMs: 1 } },
      ),
    ).rejects.toBeInstanceOf(ConnectionError);
  });
});

describe('restart resilience', () => {
  it('a session survives a server restart on the same store', async () => {
    const storeDir = mkdtempSync(join(tmpdir(), 'tuner-ts-'));
    let server = await startServer(['--store_dir', storeDir]);
    const port = Number(new URL(server.address).port);
    const client = await TunerClient.loadOrCreateStudy(
      server.address, 'durable', basicSpec(), 'w',
      { retry: { maxAttempts: 100, baseDelayMs: 20, maxDelayMs: 200 } },
    );
    const [trial] = await client.getSuggestions(1);

    await server.stop();
    const restartAt = sleep(300).then(() =>
      startServer(['--store_dir', storeDir, '--listen', `localhost:${port}`]),
    );
    // issued while the server is down; retries carry it across the restart
    const [again] = await client.getSuggestions(1);
    expect(again.id).toBe(trial.id);
    expect(again.parameters).toEqual(trial.parameters);
    server = await restartAt;
    await server.stop();
  }, 30000);
});
