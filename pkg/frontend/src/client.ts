/**
 * Client for the tuner optimization service: request suggestions through
 * long-running operations, report measurements, complete trials, and ask
 * for early-stopping verdicts.
 *
 * Built on the platform fetch only; no runtime dependencies. Transient
 * transport failures (connection refused, 503 while a server restarts) are
 * retried with exponential backoff, so a worker survives server restarts
 * and, restarted under the same clientId, is handed its previous trial.
 */

import type {
  Measurement,
  Operation,
  ParamValue,
  Study,
  StudySpec,
  Trial,
  TrialState,
} from './types.js';

const POLL_HINT_HEADER = 'x-poll-hint-secs';
const MAX_POLL_INTERVAL_MS = 30_000;

/** Error reported by the server's JSON envelope. */
export class TunerApiError extends Error {
  constructor(
    public readonly code: string,
    message: string,
    public readonly status: number,
  ) {
    super(message);
    this.name = 'TunerApiError';
  }
}

/** Transport never reached a healthy server within the retry budget. */
export class ConnectionError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'ConnectionError';
  }
}

export interface RetryOptions {
  maxAttempts?: number;
  baseDelayMs?: number;
  maxDelayMs?: number;
}

export interface ClientOptions {
  address: string;
  studyName: string;
  clientId: string;
  retry?: RetryOptions;
  /** observes every request before it is sent (fixture recording, logging) */
  onRequest?: (method: string, path: string, body: unknown) => void;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class TunerClient {
  readonly address: string;
  readonly studyName: string;
  readonly clientId: string;
  private pollIntervalMs = 50;
  private readonly retry: Required<RetryOptions>;
  private readonly onRequest?: ClientOptions['onRequest'];

  constructor(options: ClientOptions) {
    if (!options.clientId) throw new Error('clientId must be non-empty');
    this.address = options.address.replace(/\/+$/, '');
    this.studyName = options.studyName;
    this.clientId = options.clientId;
    this.retry = {
      maxAttempts: options.retry?.maxAttempts ?? 60,
      baseDelayMs: options.retry?.baseDelayMs ?? 20,
      maxDelayMs: options.retry?.maxDelayMs ?? 1000,
    };
    this.onRequest = options.onRequest;
  }

  /** Creates the study or joins it when an identical spec already exists. */
  static async loadOrCreateStudy(
    address: string,
    studyName: string,
    spec: StudySpec,
    clientId: string,
    options: Partial<Omit<ClientOptions, 'address' | 'studyName' | 'clientId'>> = {},
  ): Promise<TunerClient> {
    const client = new TunerClient({ address, studyName, clientId, ...options });
    await client.request('POST', '/v1/studies', {
      name: studyName,
      description: '',
      spec,
      load_existing: true,
    });
    return client;
  }

  private async request(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<unknown> {
    this.onRequest?.(method, path, body ?? null);
    let lastFailure = 'unknown';
    for (let attempt = 0; attempt < this.retry.maxAttempts; attempt++) {
      let response: Response;
      try {
        response = await fetch(this.address + path, {
          method,
          headers: body !== undefined ? { 'Content-Type': 'application/json' } : {},
          body: body !== undefined ? JSON.stringify(body) : undefined,
        });
      } catch (err) {
        lastFailure = String(err);
        await sleep(Math.min(this.retry.baseDelayMs * 2 ** attempt, this.retry.maxDelayMs));
        continue;
      }
      if (response.status === 503) {
        lastFailure = 'server restarting (503)';
        await sleep(Math.min(this.retry.baseDelayMs * 2 ** attempt, this.retry.maxDelayMs));
        continue;
      }
      const payload: unknown = await response.json();
      if (response.status >= 400) {
        const envelope = payload as { error?: { code?: string; message?: string } };
        throw new TunerApiError(
          envelope.error?.code ?? 'Internal',
          envelope.error?.message ?? `HTTP ${response.status}`,
          response.status,
        );
      }
      const hint = response.headers.get(POLL_HINT_HEADER);
      if (hint !== null && Number.isFinite(Number(hint))) {
        this.pollIntervalMs = Math.max(Number(hint) * 1000, 1);
      }
      return payload;
    }
    throw new ConnectionError(
      `gave up after ${this.retry.maxAttempts} attempts: ${lastFailure}`,
    );
  }

  private async pollOperation(operation: Operation): Promise<Operation> {
    let current = operation;
    let intervalMs = this.pollIntervalMs;
    while (!current.done) {
      await sleep(intervalMs);
      intervalMs = Math.min(intervalMs * 1.5, MAX_POLL_INTERVAL_MS);
      current = (await this.request('GET', `/v1/${current.name}`)) as Operation;
    }
    if (current.error !== undefined && current.error !== null) {
      throw new TunerApiError('OperationFailed', current.error, 200);
    }
    return current;
  }

  async getSuggestions(count = 1): Promise<Trial[]> {
    const operation = (await this.request(
      'POST',
      `/v1/studies/${this.studyName}:suggest`,
      { client_id: this.clientId, count },
    )) as Operation;
    const done = await this.pollOperation(operation);
    const ids = new Set((done.result as number[]) ?? []);
    const listing = (await this.request(
      'GET',
      `/v1/studies/${this.studyName}/trials?client_id=${encodeURIComponent(this.clientId)}`,
    )) as { trials: Trial[] };
    return listing.trials
      .filter((t) => ids.has(t.id))
      .sort((a, b) => a.id - b.id);
  }

  async addMeasurement(
    trialId: number,
    step: number,
    metrics: Record<string, number>,
    elapsedSecs?: number,
  ): Promise<Trial> {
    const measurement: Measurement = { step, metrics };
    if (elapsedSecs !== undefined) measurement.elapsed_secs = elapsedSecs;
    return (await this.request(
      'POST',
      `/v1/studies/${this.studyName}/trials/${trialId}:addMeasurement`,
      measurement,
    )) as Trial;
  }

  async completeTrial(
    trialId: number,
    outcome:
      | { metrics: Record<string, number>; step?: number }
      | { infeasibilityReason: string },
  ): Promise<Trial> {
    const body =
      'infeasibilityReason' in outcome
        ? { infeasibility_reason: outcome.infeasibilityReason }
        : {
            final_measurement: {
              step: outcome.step ?? 0,
              metrics: outcome.metrics,
            },
          };
    return (await this.request(
      'POST',
      `/v1/studies/${this.studyName}/trials/${trialId}:complete`,
      body,
    )) as Trial;
  }

  async shouldTrialStop(trialId: number): Promise<boolean> {
    const operation = (await this.request(
      'POST',
      `/v1/studies/${this.studyName}/trials/${trialId}:checkEarlyStopping`,
    )) as Operation;
    const done = await this.pollOperation(operation);
    return done.result === true;
  }

  async getStudy(): Promise<Study> {
    return (await this.request('GET', `/v1/studies/${this.studyName}`)) as Study;
  }

  async getTrial(trialId: number): Promise<Trial> {
    return (await this.request(
      'GET',
      `/v1/studies/${this.studyName}/trials/${trialId}`,
    )) as Trial;
  }

  async listTrials(states?: TrialState[]): Promise<Trial[]> {
    const query = states?.length
      ? `?states=${encodeURIComponent([...states].sort().join(','))}`
      : '';
    const listing = (await this.request(
      'GET',
      `/v1/studies/${this.studyName}/trials${query}`,
    )) as { trials: Trial[] };
    return listing.trials;
  }
}

export type { ParamValue };
