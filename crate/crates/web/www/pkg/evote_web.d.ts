/* tslint:disable */
/* eslint-disable */

/**
 * A turnout forest trained in the page on the synthetic corpus.
 */
export class TurnoutExplorer {
    free(): void;
    [Symbol.dispose](): void;
    constructor(seed: number, trees: number);
    predict(visibility_km: number, humidity_pct: number, temperature_c: number, wind_speed_ms: number, cloudiness_pct: number, registered: number): string;
    readonly summary: string;
}

/**
 * Scores two fingerprint captures given as text, the way the registry does.
 */
export function compare_captures(enrolled: string, presented: string): string;

/**
 * Projects partial counts to the close for one area whose cumulative turnout
 * follows `t^shape`.
 */
export function project_counts(counts: string, t: number, shape: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_turnoutexplorer_free: (a: number, b: number) => void;
    readonly compare_captures: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly project_counts: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly turnoutexplorer_new: (a: number, b: number) => [number, number, number];
    readonly turnoutexplorer_predict: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly turnoutexplorer_summary: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
