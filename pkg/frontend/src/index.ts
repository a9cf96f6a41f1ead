export { ConnectionError, TunerApiError, TunerClient } from './client.js';
export type { ClientOptions, RetryOptions } from './client.js';
export type {
  AutomatedStopping,
  ChildSpec,
  ErrorEnvelope,
  Goal,
  Measurement,
  Metadata,
  MetricSpec,
  ObservationNoise,
  Operation,
  ParamValue,
  ParameterKind,
  ParameterSpec,
  ScaleKind,
  Study,
  StudySpec,
  StudyState,
  Trial,
  TrialState,
} from './types.js';
