/** Wire-level JSON shapes shared with the optimization server. */

export type Goal = 'MAXIMIZE' | 'MINIMIZE';
export type ObservationNoise = 'LOW' | 'HIGH';
export type AutomatedStopping = 'NONE' | 'MEDIAN' | 'DECAY_CURVE';
export type ParameterKind = 'DOUBLE' | 'INTEGER' | 'DISCRETE' | 'CATEGORICAL';
export type ScaleKind = 'LINEAR' | 'LOG';
export type TrialState = 'ACTIVE' | 'STOPPING' | 'COMPLETED';
export type StudyState = 'ACTIVE' | 'INACTIVE' | 'COMPLETED';

export type ParamValue = number | string;

export interface ChildSpec {
  parent_values: ParamValue[];
  spec: ParameterSpec;
}

export interface ParameterSpec {
  name: string;
  kind: ParameterKind;
  bounds?: [number, number];
  feasible_values?: ParamValue[];
  scale?: ScaleKind;
  children?: ChildSpec[];
}

export interface MetricSpec {
  name: string;
  goal: Goal;
  min_value?: number;
  max_value?: number;
}

/** namespace -> key -> opaque string value */
export type Metadata = Record<string, Record<string, string>>;

export interface StudySpec {
  search_space: ParameterSpec[];
  metrics: MetricSpec[];
  algorithm: string;
  observation_noise?: ObservationNoise;
  automated_stopping?: AutomatedStopping;
  metadata?: Metadata;
}

export interface Measurement {
  step: number;
  metrics: Record<string, number>;
  elapsed_secs?: number;
}

export interface Trial {
  id: number;
  state: TrialState;
  client_id?: string;
  parameters: Record<string, ParamValue>;
  intermediate_measurements: Measurement[];
  final_measurement?: Measurement;
  infeasible: boolean;
  infeasibility_reason?: string;
  metadata: Metadata;
}

export interface Study {
  name: string;
  description: string;
  state: StudyState;
  spec: StudySpec;
  trials: Trial[];
}

export interface Operation {
  name: string;
  kind: 'SUGGEST' | 'EARLY_STOP';
  done: boolean;
  study_name: string;
  client_id: string;
  request_payload: number;
  result?: number[] | boolean;
  error?: string;
}

export interface ErrorEnvelope {
  error: { code: string; message: string };
}
